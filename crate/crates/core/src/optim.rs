//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub epsilon: Scalar,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("parameter {name}: shape {param:?} vs gradient {grad:?}")]
    ShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("expected {expected} gradients, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("non-finite gradient for {name} at entry {index}; step aborted")]
    NonFiniteGradient { name: String, index: usize },
}

/// First and second moment estimates, in [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update. Validates every gradient before touching any parameter,
/// so a rejected step leaves `params` and `state` unchanged.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState, config: &OptimConfig) -> Result<(), OptimError> {
    config.validate()?;
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(OptimError::CountMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(OptimError::ShapeMismatch {
                name: name.to_string(),
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient {
                name: name.to_string(),
                index,
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (((_, p), g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
