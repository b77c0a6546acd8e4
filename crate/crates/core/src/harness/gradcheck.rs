use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::StickerClass;
use crate::encoders::EncoderConfig;
use crate::model::{prepare_examples, AblationFlags, Example, Model, ModelConfig};
use crate::params::uniform;
use crate::prediction::LossWeights;
use crate::synthetic;
use crate::tensor::{finite_difference_check, FdStencil, GradCheckReport, Scalar};
use crate::Error;

/// Settings for a full-pipeline gradient check with toy encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineCheckConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub batch: usize,
    pub vocab_size: usize,
    pub image_input_dim: usize,
    pub eps: Scalar,
    #[serde(skip)]
    pub stencil: FdStencil,
    /// Parameters are redrawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: Scalar,
}

impl Default for PipelineCheckConfig {
    fn default() -> Self {
        Self {
            d_model: 8,
            num_heads: 2,
            batch: 4,
            vocab_size: 64,
            image_input_dim: 16,
            eps: 1e-3,
            stencil: FdStencil::FivePoint,
            init_scale: 0.5,
        }
    }
}

/// Model and batch used by [`pipeline_gradcheck`] for `seed`.
pub fn pipeline_fixture(cfg: &PipelineCheckConfig, seed: u64) -> Result<(Model, Vec<Example>), Error> {
    let enc = EncoderConfig {
        vocab_size: cfg.vocab_size,
        image_input_dim: cfg.image_input_dim,
        ..EncoderConfig::toy(cfg.d_model)
    };
    let mut model = Model::init(ModelConfig::new(enc.clone(), cfg.num_heads), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for (_, t) in model.params.iter_mut() {
        *t = uniform(&mut rng, t.shape(), cfg.init_scale);
    }
    let mut data = synthetic::separable(cfg.batch, cfg.image_input_dim, seed);
    // Alternate empty and non-empty sticker text so both encoder paths are covered.
    for (i, r) in data.records.iter_mut().enumerate() {
        if i % 2 == 0 {
            r.sticker_class = StickerClass::C;
            r.sticker_text.clear();
        } else {
            r.sticker_class = StickerClass::CT;
            r.sticker_text = format!("text {i} here");
        }
    }
    let examples = prepare_examples(&data.records, &enc, &data.providers())?;
    Ok((model, examples))
}

/// Compares backward-pass gradients of the joint loss against finite
/// differences for every parameter entry.
pub fn pipeline_gradcheck(cfg: &PipelineCheckConfig, seed: u64) -> Result<GradCheckReport, Error> {
    let (mut model, examples) = pipeline_fixture(cfg, seed)?;
    let batch: Vec<&Example> = examples.iter().collect();
    let weights = LossWeights::default();
    let (g, bound, loss, _) = model.batch_loss(&batch, AblationFlags::NONE, weights)?;
    let analytic = bound.gradients(&g.backward(loss.total)?);
    let params = model.params.tensors();
    let report = finite_difference_check(&params, &analytic, cfg.eps, cfg.stencil, |ts| {
        model.params.set_tensors(ts);
        let (g, _, loss, _) = model
            .batch_loss(&batch, AblationFlags::NONE, weights)
            .expect("perturbed forward pass");
        g.value(loss.total).item()
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_passes() {
        let r = pipeline_gradcheck(&PipelineCheckConfig::default(), 0).unwrap();
        assert!(r.passed(1e-4), "{r:?}");
        assert!(r.entries_checked > 1000);
    }
}
