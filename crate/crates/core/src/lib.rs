//! Joint multimodal sentiment analysis and intent recognition over chat
//! messages that carry stickers.
//!
//! The crate is organised bottom-up: [`tensor`] (values, tape autodiff,
//! finite-difference checks), [`dataset`], [`encoders`], [`fusion`],
//! [`prediction`], [`optim`], then [`model`] and [`harness`] which tie them
//! into training, evaluation and the experiment tables.

pub mod checkpoint;
pub mod dataset;
pub mod encoders;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod optim;
pub mod params;
pub mod prediction;
pub mod synthetic;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use dataset::{ChatRecord, DatasetError};
pub use encoders::{EncodeError, EncoderConfig, Providers};
pub use model::{AblationFlags, Model, ModelConfig};
pub use params::ParamSet;
pub use tensor::{Tensor, TensorError};

/// Crate-level error for operations that cross module boundaries.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] optim::OptimError),
    #[error(transparent)]
    Store(#[from] encoders::StoreError),
    #[error("{0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        Error::Checkpoint(e.to_string())
    }
}
