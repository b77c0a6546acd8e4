use serde::Serialize;

use super::{ChatRecord, DatasetError, IntentLabel, Label, SentimentLabel, StickerClass};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCount {
    pub label: &'static str,
    pub count: usize,
    #[serde(serialize_with = "four_places")]
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryStats {
    pub category: &'static str,
    pub labels: Vec<LabelCount>,
}

impl CategoryStats {
    pub fn get(&self, label: &str) -> Option<&LabelCount> {
        self.labels.iter().find(|l| l.label.eq_ignore_ascii_case(label))
    }
}

/// Per-label counts and proportions for all five label categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub total: usize,
    pub categories: Vec<CategoryStats>,
}

impl StatsReport {
    pub fn category(&self, name: &str) -> Option<&CategoryStats> {
        self.categories.iter().find(|c| c.category == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

fn four_places<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

fn tally<L: Label>(category: &'static str, records: &[ChatRecord], get: impl Fn(&ChatRecord) -> L) -> CategoryStats {
    let mut counts = vec![0usize; L::count()];
    for r in records {
        counts[get(r).code()] += 1;
    }
    let total = records.len() as f64;
    CategoryStats {
        category,
        labels: L::ALL
            .iter()
            .zip(counts)
            .map(|(l, count)| LabelCount {
                label: l.name(),
                count,
                proportion: count as f64 / total,
            })
            .collect(),
    }
}

pub fn label_statistics(records: &[ChatRecord]) -> Result<StatsReport, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Contract("label statistics need a nonempty dataset".into()));
    }
    Ok(StatsReport {
        total: records.len(),
        categories: vec![
            tally::<SentimentLabel>("context_sentiment", records, |r| r.context_sentiment),
            tally::<SentimentLabel>("sticker_sentiment", records, |r| r.sticker_sentiment),
            tally::<SentimentLabel>("multimodal_sentiment", records, |r| r.multimodal_sentiment),
            tally::<IntentLabel>("multimodal_intent", records, |r| r.multimodal_intent),
            tally::<StickerClass>("sticker_class", records, |r| r.sticker_class),
        ],
    })
}
