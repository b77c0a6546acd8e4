//! Seeded synthetic datasets for smoke runs, overfitting checks and gradient checks.
//!
//! Each record's context carries one token per gold label plus a per-record
//! token, so both heads are separable from the context alone. Sticker text and
//! thumbnails are random noise kept consistent with the sticker class.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ChatRecord, IntentLabel, Label, SentimentLabel, StickerClass};
use crate::encoders::{Providers, ThumbnailSource};
use crate::tensor::Scalar;

const WORDS: [&str; 12] = [
    "lol", "fine", "really", "maybe", "ok", "see", "you", "hmm", "sure", "wow", "later", "what",
];

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<ChatRecord>,
    /// Grayscale pixels keyed by `sticker_image_ref`.
    pub thumbnails: HashMap<String, Vec<Scalar>>,
}

impl SyntheticData {
    pub fn providers(&self) -> Providers {
        Providers {
            thumbnails: ThumbnailSource::Memory(self.thumbnails.clone()),
            ..Providers::default()
        }
    }
}

/// `n` records with labels cycling through every class so each appears.
pub fn separable(n: usize, image_input_dim: usize, seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut thumbnails = HashMap::new();
    for i in 0..n {
        let sentiment = SentimentLabel::ALL[(i + rng.gen_range(0..3)) % SentimentLabel::count()];
        let intent = IntentLabel::ALL[rng.gen_range(0..IntentLabel::count())];
        let class = StickerClass::ALL[rng.gen_range(0..StickerClass::count())];
        let filler = WORDS[rng.gen_range(0..WORDS.len())];
        let sticker_text = if class.has_text() {
            WORDS[rng.gen_range(0..WORDS.len())].to_string()
        } else {
            String::new()
        };
        let id = format!("syn{i:05}");
        let image_ref = format!("{id}.png");
        thumbnails.insert(
            image_ref.clone(),
            (0..image_input_dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        records.push(ChatRecord {
            context: format!("sent{} intent{} {filler} {id}", sentiment.code(), intent.code()),
            id,
            sticker_image_ref: image_ref,
            sticker_text,
            context_sentiment: sentiment,
            sticker_sentiment: SentimentLabel::ALL[rng.gen_range(0..3)],
            multimodal_sentiment: sentiment,
            multimodal_intent: intent,
            sticker_class: class,
        });
    }
    SyntheticData { records, thumbnails }
}
