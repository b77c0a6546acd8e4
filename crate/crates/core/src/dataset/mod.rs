//! Chat-record datasets: label vocabularies, line-delimited JSON loading,
//! validation, seeded splits, and label statistics.

mod labels;
mod stats;

pub use labels::{IntentLabel, Label, SentimentLabel, StickerClass, UnknownLabel};
pub use stats::{label_statistics, CategoryStats, LabelCount, StatsReport};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

/// One annotated chat message paired with a sticker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRecord {
    pub id: String,
    pub context: String,
    pub sticker_image_ref: String,
    pub sticker_text: String,
    pub context_sentiment: SentimentLabel,
    pub sticker_sentiment: SentimentLabel,
    pub multimodal_sentiment: SentimentLabel,
    pub multimodal_intent: IntentLabel,
    pub sticker_class: StickerClass,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: missing field {field:?} (source key {key:?})")]
    MissingField {
        line: usize,
        field: &'static str,
        key: String,
    },
    #[error("line {line}, field {field}: {source}")]
    UnknownLabel {
        line: usize,
        field: &'static str,
        #[source]
        source: UnknownLabel,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid record {id:?}: {}", join_violations(violations))]
    Invalid {
        line: usize,
        id: String,
        violations: Vec<Violation>,
    },
    #[error("{0}")]
    Contract(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Canonical record fields, in file order.
pub const FIELDS: [&str; 9] = [
    "id",
    "context",
    "sticker_image_ref",
    "sticker_text",
    "context_sentiment",
    "sticker_sentiment",
    "multimodal_sentiment",
    "multimodal_intent",
    "sticker_class",
];

/// Maps canonical field names to the keys used in a particular dataset release.
/// Unmapped fields are read under their canonical name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldMap {
    overrides: BTreeMap<&'static str, String>,
}

impl FieldMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, field: &str, key: impl Into<String>) -> std::result::Result<Self, DatasetError> {
        let canonical = FIELDS
            .iter()
            .find(|f| **f == field)
            .ok_or_else(|| DatasetError::Contract(format!("unknown record field {field:?}")))?;
        self.overrides.insert(canonical, key.into());
        Ok(self)
    }

    /// Parses `field=key` pairs separated by commas.
    pub fn parse(spec: &str) -> std::result::Result<Self, DatasetError> {
        let mut map = Self::new();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (field, key) = pair
                .split_once('=')
                .ok_or_else(|| DatasetError::Contract(format!("field mapping {pair:?} is not field=key")))?;
            map = map.with(field.trim(), key.trim())?;
        }
        Ok(map)
    }

    pub fn key<'a>(&'a self, field: &'a str) -> &'a str {
        self.overrides.get(field).map_or(field, String::as_str)
    }

    /// `(canonical field, source key)` for every field.
    pub fn table(&self) -> Vec<(&'static str, &str)> {
        FIELDS.iter().map(|f| (*f, self.key(f))).collect()
    }
}

/// How the loader treats records that fail [`validate_record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Validation {
    #[default]
    Strict,
    /// Log violations and keep the record.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    EmptyContext,
    EmptyImageRef,
    ClassTextMismatch { class: StickerClass, has_text: bool },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyId => f.write_str("empty id"),
            Self::EmptyContext => f.write_str("empty context"),
            Self::EmptyImageRef => f.write_str("empty sticker image reference"),
            Self::ClassTextMismatch { class, has_text } => write!(
                f,
                "class/text mismatch: class {class} with {} sticker text",
                if *has_text { "nonempty" } else { "empty" }
            ),
        }
    }
}

/// Checks the per-record invariants, including the sticker class / sticker text rule.
pub fn validate_record(record: &ChatRecord) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if record.id.trim().is_empty() {
        v.push(Violation::EmptyId);
    }
    if record.context.trim().is_empty() {
        v.push(Violation::EmptyContext);
    }
    if record.sticker_image_ref.trim().is_empty() {
        v.push(Violation::EmptyImageRef);
    }
    let has_text = !record.sticker_text.trim().is_empty();
    if has_text != record.sticker_class.has_text() {
        v.push(Violation::ClassTextMismatch {
            class: record.sticker_class,
            has_text,
        });
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ChatRecord>> {
    load_dataset_with(path, &FieldMap::default(), Validation::Strict)
}

pub fn load_dataset_with(path: impl AsRef<Path>, fields: &FieldMap, validation: Validation) -> Result<Vec<ChatRecord>> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    parse_records(BufReader::new(file), fields, validation).map_err(|e| match e {
        DatasetError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Parses line-delimited JSON records from any reader. Blank lines are skipped.
pub fn parse_records<R: BufRead>(reader: R, fields: &FieldMap, validation: Validation) -> Result<Vec<ChatRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, line_no, fields)?;
        if let Err(violations) = validate_record(&record) {
            match validation {
                Validation::Strict => {
                    return Err(DatasetError::Invalid {
                        line: line_no,
                        id: record.id,
                        violations,
                    })
                }
                Validation::Lenient => {
                    log::warn!("line {line_no}: record {:?}: {}", record.id, join_violations(&violations));
                }
            }
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

fn parse_line(line: &str, line_no: usize, fields: &FieldMap) -> Result<ChatRecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
        line: line_no,
        msg: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DatasetError::Malformed {
        line: line_no,
        msg: "expected a JSON object".into(),
    })?;

    let text = |field: &'static str, optional: bool| -> Result<String> {
        let key = fields.key(field);
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(Value::Null) | None if optional => Ok(String::new()),
            None | Some(Value::Null) => Err(DatasetError::MissingField {
                line: line_no,
                field,
                key: key.to_string(),
            }),
            Some(other) => Err(DatasetError::Malformed {
                line: line_no,
                msg: format!("field {key:?} must be a string, got {other}"),
            }),
        }
    };
    fn label<L: Label>(raw: String, line: usize, field: &'static str) -> Result<L> {
        L::parse_label(&raw).map_err(|source| DatasetError::UnknownLabel { line, field, source })
    }

    Ok(ChatRecord {
        id: text("id", false)?,
        context: text("context", false)?,
        sticker_image_ref: text("sticker_image_ref", false)?,
        sticker_text: text("sticker_text", true)?,
        context_sentiment: label(text("context_sentiment", false)?, line_no, "context_sentiment")?,
        sticker_sentiment: label(text("sticker_sentiment", false)?, line_no, "sticker_sentiment")?,
        multimodal_sentiment: label(text("multimodal_sentiment", false)?, line_no, "multimodal_sentiment")?,
        multimodal_intent: label(text("multimodal_intent", false)?, line_no, "multimodal_intent")?,
        sticker_class: label(text("sticker_class", false)?, line_no, "sticker_class")?,
    })
}

/// Writes records as line-delimited JSON with canonical field names.
pub fn save_dataset(path: impl AsRef<Path>, records: &[ChatRecord]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_records(&mut out, records).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn write_records<W: Write>(out: &mut W, records: &[ChatRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded shuffle, then the first `round(n * train_fraction)` records go to train.
pub fn split_dataset(records: &[ChatRecord], train_fraction: f64, seed: u64) -> Result<(Vec<ChatRecord>, Vec<ChatRecord>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Contract(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if records.len() < 2 {
        return Err(DatasetError::Contract(format!(
            "need at least 2 records to split, got {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (records.len() as f64 * train_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
