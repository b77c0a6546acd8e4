//! Sentiment and intent heads and the weighted joint loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{IntentLabel, Label, SentimentLabel};
use crate::encoders::linear;
use crate::params::{glorot, Bound, ParamSet};
use crate::tensor::{Graph, NodeId, Scalar, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

pub const W_SENTIMENT: &str = "head.sentiment.w";
pub const B_SENTIMENT: &str = "head.sentiment.b";
pub const W_INTENT: &str = "head.intent.w";
pub const B_INTENT: &str = "head.intent.b";
pub const HEAD_PREFIX: &str = "head.";
pub const SENTIMENT_HEAD_PREFIX: &str = "head.sentiment.";
pub const INTENT_HEAD_PREFIX: &str = "head.intent.";

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: Scalar = 1e-12;

pub fn init_params<R: Rng>(d_comb: usize, rng: &mut R, params: &mut ParamSet) {
    let (ns, ni) = (SentimentLabel::count(), IntentLabel::count());
    params.insert(W_SENTIMENT, glorot(rng, ns, d_comb));
    params.insert(B_SENTIMENT, Tensor::zeros(&[ns]));
    params.insert(W_INTENT, glorot(rng, ni, d_comb));
    params.insert(B_INTENT, Tensor::zeros(&[ni]));
}

/// Loss weights: `L = alpha * L_sentiment + beta * L_intent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: Scalar,
    pub beta: Scalar,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: Scalar, beta: Scalar) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite() && self.beta.is_finite() && self.alpha >= 0.0 && self.beta >= 0.0;
        if !ok || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(TensorError::Contract {
                op: "loss weights",
                msg: format!("need alpha, beta >= 0 and not both zero, got {} and {}", self.alpha, self.beta),
            });
        }
        Ok(())
    }
}

/// Head outputs as graph nodes, `[B, 3]` and `[B, 20]`.
#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub p_sentiment: NodeId,
    pub p_intent: NodeId,
}

pub fn predict_graph(g: &mut Graph, p: &Bound, e_combined: NodeId) -> Result<HeadNodes> {
    let ls = linear(g, e_combined, p.id(W_SENTIMENT), p.id(B_SENTIMENT))?;
    let li = linear(g, e_combined, p.id(W_INTENT), p.id(B_INTENT))?;
    Ok(HeadNodes {
        p_sentiment: g.softmax(ls, 1)?,
        p_intent: g.softmax(li, 1)?,
    })
}

/// Sentiment and intent distributions for a single combined vector.
pub fn predict(e_combined: &Tensor, params: &ParamSet) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let e = g.constant(e_combined.reshape(vec![1, e_combined.numel()])?);
    let heads = predict_graph(&mut g, &p, e)?;
    Ok((
        g.value(heads.p_sentiment).reshape(vec![SentimentLabel::count()])?,
        g.value(heads.p_intent).reshape(vec![IntentLabel::count()])?,
    ))
}

/// Mean negative log-likelihood of the gold labels over the batch.
pub fn cross_entropy_graph(g: &mut Graph, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.nll(probs, labels, LOG_CLAMP)
}

/// Plain evaluation of [`cross_entropy_graph`]; also returns the clamp count.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(Scalar, usize)> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = cross_entropy_graph(&mut g, p, labels)?;
    Ok((g.value(l).item(), g.clamp_count()))
}

pub fn joint_loss_graph(g: &mut Graph, l1: NodeId, l2: NodeId, w: LossWeights) -> Result<NodeId> {
    let a = g.scale(l1, w.alpha)?;
    let b = g.scale(l2, w.beta)?;
    g.add(a, b)
}

pub fn joint_loss(l1: Scalar, l2: Scalar, w: LossWeights) -> Scalar {
    w.alpha * l1 + w.beta * l2
}
