//! The full network: encoders, fusion layer and prediction heads over one parameter set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ChatRecord, Label};
use crate::encoders::{self, EncodeError, EncoderConfig, Providers, SampleInputs};
use crate::fusion::{self, FusionConfig, FusionNodes};
use crate::params::{Bound, ParamSet};
use crate::prediction::{self, HeadNodes, LossWeights};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};
use crate::Error;

/// Modalities replaced by a frozen zero vector at the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AblationFlags {
    pub drop_context: bool,
    pub drop_sticker_image: bool,
    pub drop_sticker_text: bool,
}

impl AblationFlags {
    pub const NONE: Self = Self {
        drop_context: false,
        drop_sticker_image: false,
        drop_sticker_text: false,
    };

    pub fn validate(&self) -> Result<(), Error> {
        if self.drop_context && self.drop_sticker_image && self.drop_sticker_text {
            return Err(Error::Config("cannot drop all three modalities".into()));
        }
        Ok(())
    }

    pub fn any(&self) -> bool {
        self.drop_context || self.drop_sticker_image || self.drop_sticker_text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub num_heads: usize,
    /// Width of the combined feature vector.
    pub d_comb: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, num_heads: usize) -> Self {
        let d_comb = encoder.d_model;
        Self {
            encoder,
            num_heads,
            d_comb,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            d_model: self.encoder.d_model,
            num_heads: self.num_heads,
            d_comb: self.d_comb,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.encoder.validate(self.num_heads)?;
        self.fusion().validate()?;
        Ok(())
    }
}

/// A training/evaluation example: resolved inputs plus gold label codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: SampleInputs,
    pub sentiment: usize,
    pub intent: usize,
}

pub fn prepare_examples(records: &[ChatRecord], config: &EncoderConfig, providers: &Providers) -> Result<Vec<Example>, EncodeError> {
    let inputs = encoders::prepare_inputs(records, config, providers)?;
    Ok(inputs
        .into_iter()
        .zip(records)
        .map(|(inputs, r)| Example {
            inputs,
            sentiment: r.multimodal_sentiment.code(),
            intent: r.multimodal_intent.code(),
        })
        .collect())
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub e_x: NodeId,
    pub e_s: NodeId,
    pub e_i: NodeId,
    pub fusion: FusionNodes,
    pub heads: HeadNodes,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub sentiment: NodeId,
    pub intent: NodeId,
    pub total: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        encoders::init_params(&config.encoder, &mut rng, &mut params);
        fusion::init_params(&config.fusion(), &mut rng, &mut params);
        prediction::init_params(config.d_comb, &mut rng, &mut params);
        Ok(Self { config, params })
    }

    /// Checks that `params` has exactly the names and shapes this config needs.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, Error> {
        let template = Self::init(config, 0)?;
        let mut problems = Vec::new();
        for (name, t) in template.params.iter() {
            match params.get(name) {
                None => problems.push(format!("missing {name}")),
                Some(p) if p.shape() != t.shape() => {
                    problems.push(format!("{name}: shape {:?}, expected {:?}", p.shape(), t.shape()))
                }
                _ => {}
            }
        }
        for name in params.names() {
            if !template.params.contains(name) {
                problems.push(format!("unexpected {name}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(format!("parameters do not match config: {}", problems.join("; "))));
        }
        // Reorder into canonical order.
        let mut ordered = ParamSet::new();
        for name in template.params.names() {
            ordered.insert(name, params.get(name).unwrap().clone());
        }
        Ok(Self {
            config: template.config,
            params: ordered,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, batch: &[&SampleInputs], ablation: AblationFlags) -> Result<ForwardNodes, Error> {
        let enc = &self.config.encoder;
        let n = batch.len();
        let d = enc.d_model;
        let zeros = |g: &mut Graph| g.constant(Tensor::zeros(&[n, d]));
        let e_x = if ablation.drop_context {
            zeros(g)
        } else {
            encoders::encode_context(g, p, enc, batch)?
        };
        let e_s = if ablation.drop_sticker_text {
            zeros(g)
        } else {
            encoders::encode_sticker_text(g, p, enc, batch)?
        };
        let e_i = if ablation.drop_sticker_image {
            zeros(g)
        } else {
            encoders::encode_sticker_image(g, p, enc, batch)?
        };
        let fusion = fusion::fuse_graph(g, p, &self.config.fusion(), e_x, e_s, e_i)?;
        let heads = prediction::predict_graph(g, p, fusion.e_combined)?;
        Ok(ForwardNodes {
            e_x,
            e_s,
            e_i,
            fusion,
            heads,
        })
    }

    pub fn loss(g: &mut Graph, fw: &ForwardNodes, sentiment: &[usize], intent: &[usize], weights: LossWeights) -> Result<LossNodes, TensorError> {
        let l1 = prediction::cross_entropy_graph(g, fw.heads.p_sentiment, sentiment)?;
        let l2 = prediction::cross_entropy_graph(g, fw.heads.p_intent, intent)?;
        let total = prediction::joint_loss_graph(g, l1, l2, weights)?;
        Ok(LossNodes {
            sentiment: l1,
            intent: l2,
            total,
        })
    }

    /// Forward plus loss on a batch of examples; returns the graph for backward.
    pub fn batch_loss(&self, batch: &[&Example], ablation: AblationFlags, weights: LossWeights) -> Result<(Graph, Bound, LossNodes, ForwardNodes), Error> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let inputs: Vec<&SampleInputs> = batch.iter().map(|e| &e.inputs).collect();
        let fw = self.forward(&mut g, &p, &inputs, ablation)?;
        let sentiment: Vec<usize> = batch.iter().map(|e| e.sentiment).collect();
        let intent: Vec<usize> = batch.iter().map(|e| e.intent).collect();
        let loss = Self::loss(&mut g, &fw, &sentiment, &intent, weights)?;
        Ok((g, p, loss, fw))
    }

    /// Argmax sentiment and intent codes for each example.
    pub fn predict_codes(&self, batch: &[&SampleInputs], ablation: AblationFlags) -> Result<Vec<(usize, usize)>, Error> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let fw = self.forward(&mut g, &p, batch, ablation)?;
        let (ps, pi) = (g.value(fw.heads.p_sentiment), g.value(fw.heads.p_intent));
        Ok((0..batch.len()).map(|r| (argmax(ps.row(r)), argmax(pi.row(r)))).collect())
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_three_dropped_is_invalid() {
        let all = AblationFlags {
            drop_context: true,
            drop_sticker_image: true,
            drop_sticker_text: true,
        };
        assert!(all.validate().is_err());
        assert!(AblationFlags::NONE.validate().is_ok());
    }

    #[test]
    fn from_params_rejects_shape_drift() {
        let cfg = ModelConfig::new(EncoderConfig::toy(4), 2);
        let m = Model::init(cfg.clone(), 1).unwrap();
        assert!(Model::from_params(cfg.clone(), m.params.clone()).is_ok());
        let mut bad = m.params.clone();
        bad.insert(fusion::W_DIFF, Tensor::zeros(&[4, 3]));
        assert!(matches!(Model::from_params(cfg, bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::new(EncoderConfig::toy(4), 1);
        assert_eq!(Model::init(cfg.clone(), 9).unwrap(), Model::init(cfg.clone(), 9).unwrap());
        assert_ne!(Model::init(cfg.clone(), 9).unwrap(), Model::init(cfg, 10).unwrap());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
