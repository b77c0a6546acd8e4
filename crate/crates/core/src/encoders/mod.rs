//! Modality encoders producing the context, sticker-text and sticker-image
//! vectors for each record.
//!
//! Each modality has a provider. In `toy` mode the text encoders are a
//! hashed bag of tokens, mean-pooled and passed through `tanh(W·x + b)`, and
//! the image encoder reads a grayscale thumbnail. In `precomputed` mode the
//! vectors come from an [`EmbeddingStore`]. Text stores hold pooled vectors;
//! image stores hold raw image-encoder outputs. Both image paths feed a
//! trainable 1-D convolution followed by global average pooling.

mod store;
mod tokenize;

pub use store::{EmbeddingStore, Modality, StoreError, STORE_MAGIC, STORE_VERSION};
pub use tokenize::{hash_token, token_ids, tokenize};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ChatRecord;
use crate::params::{glorot, uniform, Bound, ParamSet};
use crate::tensor::{Graph, NodeId, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Toy,
    Precomputed,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "toy" => Ok(Self::Toy),
            "precomputed" => Ok(Self::Precomputed),
            other => Err(format!("unknown provider {other:?} (expected toy or precomputed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub vocab_size: usize,
    /// Width of the raw image representation before the convolution.
    pub image_input_dim: usize,
    pub conv_kernel: usize,
    pub context_provider: ProviderKind,
    pub sticker_text_provider: ProviderKind,
    pub image_provider: ProviderKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::toy(32)
    }
}

impl EncoderConfig {
    /// All-toy configuration with 8×8 thumbnails.
    pub fn toy(d_model: usize) -> Self {
        Self {
            d_model,
            vocab_size: 4096,
            image_input_dim: 64,
            conv_kernel: 3,
            context_provider: ProviderKind::Toy,
            sticker_text_provider: ProviderKind::Toy,
            image_provider: ProviderKind::Toy,
        }
    }

    /// All-precomputed configuration at 768-wide text vectors.
    pub fn precomputed(image_input_dim: usize) -> Self {
        Self {
            d_model: 768,
            vocab_size: 4096,
            image_input_dim,
            conv_kernel: 3,
            context_provider: ProviderKind::Precomputed,
            sticker_text_provider: ProviderKind::Precomputed,
            image_provider: ProviderKind::Precomputed,
        }
    }

    pub fn validate(&self, num_heads: usize) -> Result<(), EncodeError> {
        let bad = |msg: String| Err(EncodeError::Config(msg));
        if self.d_model == 0 {
            return bad("d_model must be positive".into());
        }
        if num_heads == 0 || self.d_model % num_heads != 0 {
            return bad(format!("d_model {} is not divisible by {num_heads} heads", self.d_model));
        }
        if self.conv_kernel == 0 {
            return bad("conv_kernel must be at least 1".into());
        }
        if self.conv_kernel > self.image_input_dim {
            return bad(format!(
                "conv_kernel {} exceeds image_input_dim {}",
                self.conv_kernel, self.image_input_dim
            ));
        }
        let uses_toy_text = self.context_provider == ProviderKind::Toy || self.sticker_text_provider == ProviderKind::Toy;
        if uses_toy_text && self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.image_provider == ProviderKind::Toy && thumbnail_side(self.image_input_dim).is_none() {
            return bad(format!(
                "toy image mode needs a square thumbnail; image_input_dim {} is not a perfect square",
                self.image_input_dim
            ));
        }
        Ok(())
    }
}

fn thumbnail_side(dim: usize) -> Option<u32> {
    let side = (dim as f64).sqrt().round() as usize;
    (side * side == dim && side > 0).then_some(side as u32)
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("missing {modality} embedding for {} record(s): {}", ids.len(), preview(ids))]
    MissingEmbedding { modality: &'static str, ids: Vec<String> },
    #[error("encoder config: {0}")]
    Config(String),
    #[error("image {path}: {msg}")]
    Image { path: String, msg: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

/// Where toy-mode thumbnails come from.
#[derive(Debug, Clone, Default)]
pub enum ThumbnailSource {
    #[default]
    None,
    /// Image files resolved relative to this directory.
    Dir(PathBuf),
    /// Pre-decoded pixels keyed by `sticker_image_ref`, values in [0, 1].
    Memory(HashMap<String, Vec<Scalar>>),
}

/// Everything the encoders may read from besides trainable parameters.
#[derive(Debug, Clone, Default)]
pub struct Providers {
    pub context_store: Option<EmbeddingStore>,
    pub sticker_text_store: Option<EmbeddingStore>,
    pub image_store: Option<EmbeddingStore>,
    pub thumbnails: ThumbnailSource,
}

impl Providers {
    pub fn thumbnails_in(dir: impl Into<PathBuf>) -> Self {
        Self {
            thumbnails: ThumbnailSource::Dir(dir.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextInput {
    Tokens(Vec<usize>),
    Pooled(Vec<Scalar>),
    /// Empty sticker text; encoded by the learned empty-text vector.
    Empty,
}

/// Resolved, provider-specific inputs for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInputs {
    pub id: String,
    pub context: TextInput,
    pub sticker_text: TextInput,
    pub image: Vec<Scalar>,
}

/// Loads a grayscale thumbnail of `side × side` pixels scaled to [0, 1].
pub fn load_thumbnail(path: &Path, side: u32) -> Result<Vec<Scalar>, EncodeError> {
    let img = image::open(path).map_err(|e| EncodeError::Image {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let gray = image::imageops::resize(&img.to_luma8(), side, side, image::imageops::FilterType::Triangle);
    Ok(gray.pixels().map(|p| p.0[0] as Scalar / 255.0).collect())
}

fn pooled_from_store(store: Option<&EmbeddingStore>, id: &str) -> Option<Vec<Scalar>> {
    store.and_then(|s| s.get(id)).map(|v| v.iter().map(|&x| x as Scalar).collect())
}

/// Resolves every record's inputs. Fails with the full list of offending ids
/// if any provider lacks a record.
pub fn prepare_inputs(records: &[ChatRecord], config: &EncoderConfig, providers: &Providers) -> Result<Vec<SampleInputs>, EncodeError> {
    let check_store = |store: Option<&EmbeddingStore>, modality: Modality, width: usize| -> Result<(), EncodeError> {
        let s = store.ok_or_else(|| EncodeError::Config(format!("{} provider is precomputed but no store was given", modality.name())))?;
        if s.modality() != modality || s.width() != width {
            return Err(EncodeError::Config(format!(
                "{} store has modality {} and width {}, expected width {width}",
                modality.name(),
                s.modality().name(),
                s.width()
            )));
        }
        Ok(())
    };
    if config.context_provider == ProviderKind::Precomputed {
        check_store(providers.context_store.as_ref(), Modality::Context, config.d_model)?;
    }
    if config.sticker_text_provider == ProviderKind::Precomputed {
        check_store(providers.sticker_text_store.as_ref(), Modality::StickerText, config.d_model)?;
    }
    if config.image_provider == ProviderKind::Precomputed {
        check_store(providers.image_store.as_ref(), Modality::StickerImage, config.image_input_dim)?;
    }

    let mut missing: [Vec<String>; 3] = Default::default();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let context = match config.context_provider {
            ProviderKind::Toy => Some(TextInput::Tokens(token_ids(&r.context, config.vocab_size))),
            ProviderKind::Precomputed => pooled_from_store(providers.context_store.as_ref(), &r.id).map(TextInput::Pooled),
        };
        let sticker_text = if r.sticker_text.trim().is_empty() {
            Some(TextInput::Empty)
        } else {
            match config.sticker_text_provider {
                ProviderKind::Toy => Some(TextInput::Tokens(token_ids(&r.sticker_text, config.vocab_size))),
                ProviderKind::Precomputed => {
                    pooled_from_store(providers.sticker_text_store.as_ref(), &r.id).map(TextInput::Pooled)
                }
            }
        };
        let image = match config.image_provider {
            ProviderKind::Precomputed => pooled_from_store(providers.image_store.as_ref(), &r.id),
            ProviderKind::Toy => resolve_thumbnail(&providers.thumbnails, &r.sticker_image_ref, config.image_input_dim)?,
        };
        match (context, sticker_text, image) {
            (Some(context), Some(sticker_text), Some(image)) => out.push(SampleInputs {
                id: r.id.clone(),
                context,
                sticker_text,
                image,
            }),
            (c, s, i) => {
                for (slot, absent) in missing.iter_mut().zip([c.is_none(), s.is_none(), i.is_none()]) {
                    if absent {
                        slot.push(r.id.clone());
                    }
                }
            }
        }
    }
    for (ids, modality) in missing.into_iter().zip([Modality::Context, Modality::StickerText, Modality::StickerImage]) {
        if !ids.is_empty() {
            return Err(EncodeError::MissingEmbedding {
                modality: modality.name(),
                ids,
            });
        }
    }
    Ok(out)
}

fn resolve_thumbnail(source: &ThumbnailSource, key: &str, dim: usize) -> Result<Option<Vec<Scalar>>, EncodeError> {
    let side = thumbnail_side(dim).ok_or_else(|| EncodeError::Config(format!("image_input_dim {dim} is not square")))?;
    match source {
        ThumbnailSource::None => Ok(None),
        ThumbnailSource::Memory(map) => match map.get(key) {
            Some(v) if v.len() == dim => Ok(Some(v.clone())),
            Some(v) => Err(EncodeError::Config(format!(
                "in-memory thumbnail {key:?} has {} pixels, expected {dim}",
                v.len()
            ))),
            None => Ok(None),
        },
        ThumbnailSource::Dir(root) => {
            let path = root.join(key);
            if !path.is_file() {
                return Ok(None);
            }
            load_thumbnail(&path, side).map(Some)
        }
    }
}

pub mod names {
    pub const CONTEXT_EMBEDDING: &str = "encoder.context.embedding";
    pub const CONTEXT_W: &str = "encoder.context.w";
    pub const CONTEXT_B: &str = "encoder.context.b";
    pub const STICKER_TEXT_EMBEDDING: &str = "encoder.sticker_text.embedding";
    pub const STICKER_TEXT_W: &str = "encoder.sticker_text.w";
    pub const STICKER_TEXT_B: &str = "encoder.sticker_text.b";
    pub const STICKER_TEXT_EMPTY: &str = "encoder.sticker_text.empty";
    pub const IMAGE_CONV_W: &str = "encoder.image.conv_w";
    pub const IMAGE_CONV_B: &str = "encoder.image.conv_b";

    pub const CONTEXT_PREFIX: &str = "encoder.context.";
    pub const STICKER_TEXT_PREFIX: &str = "encoder.sticker_text.";
    pub const IMAGE_PREFIX: &str = "encoder.image.";
}

const EMBED_INIT: Scalar = 0.5;

/// Adds the encoder parameters this configuration needs.
pub fn init_params<R: Rng>(config: &EncoderConfig, rng: &mut R, params: &mut ParamSet) {
    let d = config.d_model;
    if config.context_provider == ProviderKind::Toy {
        params.insert(names::CONTEXT_EMBEDDING, uniform(rng, &[config.vocab_size, d], EMBED_INIT));
        params.insert(names::CONTEXT_W, glorot(rng, d, d));
        params.insert(names::CONTEXT_B, Tensor::zeros(&[d]));
    }
    if config.sticker_text_provider == ProviderKind::Toy {
        params.insert(names::STICKER_TEXT_EMBEDDING, uniform(rng, &[config.vocab_size, d], EMBED_INIT));
        params.insert(names::STICKER_TEXT_W, glorot(rng, d, d));
        params.insert(names::STICKER_TEXT_B, Tensor::zeros(&[d]));
    }
    params.insert(names::STICKER_TEXT_EMPTY, uniform(rng, &[d], EMBED_INIT));
    let k = config.conv_kernel;
    let limit = (3.0 / k as Scalar).sqrt();
    params.insert(names::IMAGE_CONV_W, uniform(rng, &[d, k], limit));
    params.insert(names::IMAGE_CONV_B, Tensor::zeros(&[d]));
}

/// `x · Wᵀ + b` for `W` stored as `[out, in]`.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
    let wt = g.transpose(w)?;
    let y = g.matmul(x, wt)?;
    g.add_bias(y, b)
}

fn pooled_rows(g: &mut Graph, rows: &[&Vec<Scalar>], d: usize) -> Result<NodeId, TensorError> {
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(TensorError::Contract {
                op: "encoder",
                msg: format!("pooled vector width {} != d_model {d}", r.len()),
            });
        }
        data.extend_from_slice(r);
    }
    Ok(g.constant(Tensor::matrix(rows.len(), d, data)?))
}

fn toy_text(g: &mut Graph, p: &Bound, prefix: &str, bags: &[Vec<usize>]) -> Result<NodeId, TensorError> {
    let table = p.id(&format!("{prefix}embedding"));
    let pooled = g.embedding_bag(table, bags)?;
    let h = linear(g, pooled, p.id(&format!("{prefix}w")), p.id(&format!("{prefix}b")))?;
    g.tanh(h)
}

/// Context vectors `[B, d]`.
pub fn encode_context(g: &mut Graph, p: &Bound, config: &EncoderConfig, batch: &[&SampleInputs]) -> Result<NodeId, EncodeError> {
    let mut bags = Vec::new();
    let mut pooled = Vec::new();
    for s in batch {
        match &s.context {
            TextInput::Tokens(t) if !t.is_empty() => bags.push(t.clone()),
            TextInput::Pooled(v) => pooled.push(v),
            _ => {
                return Err(EncodeError::Config(format!("record {:?} has no context input", s.id)));
            }
        }
    }
    let node = match config.context_provider {
        ProviderKind::Toy if bags.len() == batch.len() => toy_text(g, p, names::CONTEXT_PREFIX, &bags)?,
        ProviderKind::Precomputed if pooled.len() == batch.len() => pooled_rows(g, &pooled, config.d_model)?,
        _ => return Err(EncodeError::Config("context inputs do not match the context provider".into())),
    };
    Ok(node)
}

/// Sticker-text vectors `[B, d]`; empty texts map to the learned empty vector.
pub fn encode_sticker_text(g: &mut Graph, p: &Bound, config: &EncoderConfig, batch: &[&SampleInputs]) -> Result<NodeId, EncodeError> {
    let d = config.d_model;
    let mut bags = Vec::new();
    let mut pooled = Vec::new();
    let mut picks = Vec::with_capacity(batch.len());
    for s in batch {
        match (&s.sticker_text, config.sticker_text_provider) {
            (TextInput::Empty, _) => picks.push((1, 0)),
            (TextInput::Tokens(t), ProviderKind::Toy) if !t.is_empty() => {
                picks.push((0, bags.len()));
                bags.push(t.clone());
            }
            (TextInput::Pooled(v), ProviderKind::Precomputed) => {
                picks.push((0, pooled.len()));
                pooled.push(v);
            }
            _ => {
                return Err(EncodeError::Config(format!(
                    "record {:?}: sticker-text input does not match the provider",
                    s.id
                )))
            }
        }
    }
    let empty = p.id(names::STICKER_TEXT_EMPTY);
    let empty_row = g.reshape(empty, vec![1, d])?;
    let encoded = if !bags.is_empty() {
        Some(toy_text(g, p, names::STICKER_TEXT_PREFIX, &bags)?)
    } else if !pooled.is_empty() {
        Some(pooled_rows(g, &pooled, d)?)
    } else {
        None
    };
    let node = match encoded {
        Some(enc) => g.gather_rows(&[enc, empty_row], &picks)?,
        None => {
            let picks: Vec<_> = picks.iter().map(|_| (0, 0)).collect();
            g.gather_rows(&[empty_row], &picks)?
        }
    };
    Ok(node)
}

/// Sticker-image vectors `[B, d]`: conv1d over the raw image vector, then
/// global average pooling over positions.
pub fn encode_sticker_image(g: &mut Graph, p: &Bound, config: &EncoderConfig, batch: &[&SampleInputs]) -> Result<NodeId, EncodeError> {
    let len = config.image_input_dim;
    let mut data = Vec::with_capacity(batch.len() * len);
    for s in batch {
        if s.image.len() != len {
            return Err(EncodeError::Config(format!(
                "record {:?}: image vector width {} != image_input_dim {len}",
                s.id,
                s.image.len()
            )));
        }
        data.extend_from_slice(&s.image);
    }
    let input = g.constant(Tensor::matrix(batch.len(), len, data)?);
    let conv = g.conv1d(input, p.id(names::IMAGE_CONV_W), p.id(names::IMAGE_CONV_B))?;
    Ok(g.mean_last_axis(conv)?)
}
