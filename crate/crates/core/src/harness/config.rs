use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, ProviderKind};
use crate::model::{AblationFlags, ModelConfig};
use crate::optim::OptimConfig;
use crate::prediction::LossWeights;
use crate::tensor::Scalar;
use crate::Error;

/// Which losses contribute to training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    #[default]
    Joint,
    SentimentOnly,
    IntentOnly,
}

impl TaskMode {
    pub fn trains_sentiment(self) -> bool {
        self != Self::IntentOnly
    }

    pub fn trains_intent(self) -> bool {
        self != Self::SentimentOnly
    }
}

impl std::str::FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "joint" => Ok(Self::Joint),
            "sentiment_only" | "sentiment" => Ok(Self::SentimentOnly),
            "intent_only" | "intent" => Ok(Self::IntentOnly),
            other => Err(format!("unknown task mode {other:?} (expected joint, sentiment_only or intent_only)")),
        }
    }
}

/// Every knob of a training run. Flat so it maps one-to-one onto TOML keys
/// and command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub learning_rate: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub epsilon: Scalar,
    pub alpha: Scalar,
    pub beta: Scalar,
    pub task_mode: TaskMode,
    pub drop_context: bool,
    pub drop_sticker_image: bool,
    pub drop_sticker_text: bool,
    pub d_model: usize,
    pub num_heads: usize,
    /// Width of the combined feature vector; `d_model` when unset.
    pub d_comb: Option<usize>,
    pub vocab_size: usize,
    pub image_input_dim: usize,
    pub conv_kernel: usize,
    pub context_provider: ProviderKind,
    pub sticker_text_provider: ProviderKind,
    pub image_provider: ProviderKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        let enc = EncoderConfig::default();
        let w = LossWeights::default();
        Self {
            epochs: 50,
            train_batch: 16,
            eval_batch: 2,
            learning_rate: optim.learning_rate,
            beta1: optim.beta1,
            beta2: optim.beta2,
            epsilon: optim.epsilon,
            alpha: w.alpha,
            beta: w.beta,
            task_mode: TaskMode::Joint,
            drop_context: false,
            drop_sticker_image: false,
            drop_sticker_text: false,
            d_model: enc.d_model,
            num_heads: 4,
            d_comb: None,
            vocab_size: enc.vocab_size,
            image_input_dim: enc.image_input_dim,
            conv_kernel: enc.conv_kernel,
            context_provider: enc.context_provider,
            sticker_text_provider: enc.sticker_text_provider,
            image_provider: enc.image_provider,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// The configured weights with the untrained task's weight zeroed.
    pub fn loss_weights(&self) -> LossWeights {
        match self.task_mode {
            TaskMode::Joint => LossWeights {
                alpha: self.alpha,
                beta: self.beta,
            },
            TaskMode::SentimentOnly => LossWeights {
                alpha: self.alpha,
                beta: 0.0,
            },
            TaskMode::IntentOnly => LossWeights {
                alpha: 0.0,
                beta: self.beta,
            },
        }
    }

    pub fn ablation(&self) -> AblationFlags {
        AblationFlags {
            drop_context: self.drop_context,
            drop_sticker_image: self.drop_sticker_image,
            drop_sticker_text: self.drop_sticker_text,
        }
    }

    pub fn set_ablation(&mut self, flags: AblationFlags) {
        self.drop_context = flags.drop_context;
        self.drop_sticker_image = flags.drop_sticker_image;
        self.drop_sticker_text = flags.drop_sticker_text;
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            vocab_size: self.vocab_size,
            image_input_dim: self.image_input_dim,
            conv_kernel: self.conv_kernel,
            context_provider: self.context_provider,
            sticker_text_provider: self.sticker_text_provider,
            image_provider: self.image_provider,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder(),
            num_heads: self.num_heads,
            d_comb: self.d_comb.unwrap_or(self.d_model),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.train_batch == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        self.optim().validate()?;
        self.loss_weights().validate()?;
        self.ablation().validate()?;
        self.model_config().validate()
    }
}
