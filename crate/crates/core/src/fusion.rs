//! Representation fusion: sticker token stacking, cascaded multi-head
//! attention, the differential vector and the combined feature projection.
//!
//! Shapes, per batch of `B` samples at width `d`:
//!
//! - `e_is`: the 2-token sticker sequence `[image, sticker text]`, stored as `[2B, d]`
//! - `o_mha = MHA(q = e_x, k = v = e_is)`: `[B, d]`
//! - `v_diff = W_diff (o_mha - e_x) + b_diff`: `[B, d]`
//! - `o_s = MHA(q = e_s, k = e_s, v = o_mha)`, `o_x = MHA(q = e_x, k = e_x, v = o_mha)`: `[B, d]`
//! - `e_combined = W_e [flatten(e_is), e_x, v_diff, o_s, o_x] + b_e`: `[B, d_comb]`, input width `6d`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::linear;
use crate::params::{glorot, Bound, ParamSet};
use crate::tensor::{Graph, NodeId, Scalar, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_comb: usize,
}

impl FusionConfig {
    pub fn new(d_model: usize, num_heads: usize) -> Self {
        Self {
            d_model,
            num_heads,
            d_comb: d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return Err(TensorError::Contract {
                op: "fusion config",
                msg: format!("d_model {} is not divisible by {} heads", self.d_model, self.num_heads),
            });
        }
        if self.d_comb == 0 {
            return Err(TensorError::Contract {
                op: "fusion config",
                msg: "d_comb must be positive".into(),
            });
        }
        Ok(())
    }

    /// Input width of the combined projection.
    pub fn combined_input_width(&self) -> usize {
        6 * self.d_model
    }
}

/// Parameter-name prefixes of the three attention applications.
pub const ATTN_STICKER: &str = "fusion.attn_sticker";
pub const ATTN_STICKER_SELF: &str = "fusion.attn_s";
pub const ATTN_CONTEXT_SELF: &str = "fusion.attn_x";
pub const W_DIFF: &str = "fusion.w_diff";
pub const B_DIFF: &str = "fusion.b_diff";
pub const W_E: &str = "fusion.w_e";
pub const B_E: &str = "fusion.b_e";

const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

pub fn attention_param_names(prefix: &str) -> Vec<String> {
    PROJECTIONS
        .iter()
        .flat_map(|p| [format!("{prefix}.w_{p}"), format!("{prefix}.b_{p}")])
        .collect()
}

pub fn init_params<R: Rng>(config: &FusionConfig, rng: &mut R, params: &mut ParamSet) {
    let d = config.d_model;
    for prefix in [ATTN_STICKER, ATTN_STICKER_SELF, ATTN_CONTEXT_SELF] {
        for p in PROJECTIONS {
            params.insert(format!("{prefix}.w_{p}"), glorot(rng, d, d));
            params.insert(format!("{prefix}.b_{p}"), Tensor::zeros(&[d]));
        }
    }
    params.insert(W_DIFF, glorot(rng, d, d));
    params.insert(B_DIFF, Tensor::zeros(&[d]));
    params.insert(W_E, glorot(rng, config.d_comb, config.combined_input_width()));
    params.insert(B_E, Tensor::zeros(&[config.d_comb]));
}

fn same_width(g: &Graph, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
    if sa != sb {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok(())
}

/// Stacks `e_i` and `e_s` (`[B, d]` each) into per-sample 2-token sequences,
/// image token first. The result is `[2B, d]` with rows `2b` and `2b + 1`
/// belonging to sample `b`.
pub fn concat_sticker(g: &mut Graph, e_i: NodeId, e_s: NodeId) -> Result<NodeId> {
    same_width(g, "concat_sticker", e_i, e_s)?;
    let batch = g.value(e_i).dims2("concat_sticker")?.0;
    let picks: Vec<_> = (0..batch).flat_map(|b| [(0, b), (1, b)]).collect();
    g.gather_rows(&[e_i, e_s], &picks)
}

/// Output of one multi-head attention application.
pub struct Attention {
    /// `[B·Tq, d]`
    pub output: NodeId,
    /// Per-head attention weights, each `[B, Tq, Tk]`.
    pub weights: Vec<NodeId>,
}

/// Scaled dot-product attention with learned query/key/value/output
/// projections. Sequences are passed flattened as `[B·T, d]`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    query: NodeId,
    key: NodeId,
    value: NodeId,
    batch: usize,
    num_heads: usize,
) -> Result<Attention> {
    let (q_rows, d) = g.value(query).dims2("multi_head_attention")?;
    let (k_rows, kd) = g.value(key).dims2("multi_head_attention")?;
    let (v_rows, vd) = g.value(value).dims2("multi_head_attention")?;
    if num_heads == 0 || d % num_heads != 0 {
        return Err(TensorError::Contract {
            op: "multi_head_attention",
            msg: format!("d_model {d} is not divisible by {num_heads} heads"),
        });
    }
    if k_rows != v_rows || kd != d || vd != d || q_rows % batch != 0 || k_rows % batch != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            lhs: vec![q_rows, d],
            rhs: vec![k_rows, kd, v_rows, vd],
        });
    }
    let (tq, tk) = (q_rows / batch, k_rows / batch);
    let dh = d / num_heads;
    let w = |name: &str| p.id(&format!("{prefix}.{name}"));

    let q = linear(g, query, w("w_q"), w("b_q"))?;
    // Softmax over keys ignores the per-query shift q·b_k, so the key bias is
    // left out of the scores; this makes the cancellation exact in floating point.
    let wk_t = g.transpose(w("w_k"))?;
    let k = g.matmul(key, wk_t)?;
    let v = linear(g, value, w("w_v"), w("b_v"))?;
    let scale = 1.0 / (dh as Scalar).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let qh = g.reshape(qh, vec![batch, tq, dh])?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let kh = g.reshape(kh, vec![batch, tk, dh])?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let vh = g.reshape(vh, vec![batch, tk, dh])?;
        let kt = g.transpose_last2(kh)?;
        let scores = g.bmm(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores, 2)?;
        let out = g.bmm(attn, vh)?;
        heads.push(g.reshape(out, vec![batch * tq, dh])?);
        weights.push(attn);
    }
    let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    let output = linear(g, merged, w("w_o"), w("b_o"))?;
    Ok(Attention { output, weights })
}

/// `W_diff · (o_mha - e_x) + b_diff`.
pub fn differential_vector(g: &mut Graph, o_mha: NodeId, e_x: NodeId, w_diff: NodeId, b_diff: NodeId) -> Result<NodeId> {
    same_width(g, "differential_vector", o_mha, e_x)?;
    let diff = g.sub(o_mha, e_x)?;
    linear(g, diff, w_diff, b_diff)
}

/// Graph nodes of one fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionNodes {
    pub e_is: NodeId,
    pub o_mha: NodeId,
    pub v_diff: NodeId,
    pub o_s: NodeId,
    pub o_x: NodeId,
    pub e_combined: NodeId,
}

/// Runs the fusion layer over a batch of `[B, d]` modality vectors.
pub fn fuse_graph(g: &mut Graph, p: &Bound, config: &FusionConfig, e_x: NodeId, e_s: NodeId, e_i: NodeId) -> Result<FusionNodes> {
    config.validate()?;
    same_width(g, "fuse", e_x, e_s)?;
    same_width(g, "fuse", e_x, e_i)?;
    let (batch, d) = g.value(e_x).dims2("fuse")?;
    if d != config.d_model {
        return Err(TensorError::Contract {
            op: "fuse",
            msg: format!("embedding width {d} != d_model {}", config.d_model),
        });
    }
    let h = config.num_heads;
    let e_is = concat_sticker(g, e_i, e_s)?;
    let o_mha = multi_head_attention(g, p, ATTN_STICKER, e_x, e_is, e_is, batch, h)?.output;
    let v_diff = differential_vector(g, o_mha, e_x, p.id(W_DIFF), p.id(B_DIFF))?;
    let o_s = multi_head_attention(g, p, ATTN_STICKER_SELF, e_s, e_s, o_mha, batch, h)?.output;
    let o_x = multi_head_attention(g, p, ATTN_CONTEXT_SELF, e_x, e_x, o_mha, batch, h)?.output;
    let e_is_flat = g.reshape(e_is, vec![batch, 2 * d])?;
    let features = g.concat_cols(&[e_is_flat, e_x, v_diff, o_s, o_x])?;
    let e_combined = linear(g, features, p.id(W_E), p.id(B_E))?;
    Ok(FusionNodes {
        e_is,
        o_mha,
        v_diff,
        o_s,
        o_x,
        e_combined,
    })
}

/// Fusion results for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `[2, d]`: image token, then sticker-text token.
    pub e_is: Tensor,
    pub o_mha: Tensor,
    pub v_diff: Tensor,
    pub o_s: Tensor,
    pub o_x: Tensor,
    pub e_combined: Tensor,
}

/// Single-sample convenience wrapper over [`fuse_graph`].
pub fn fuse(e_x: &Tensor, e_s: &Tensor, e_i: &Tensor, params: &ParamSet, config: &FusionConfig) -> Result<FusionOutput> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let row = |g: &mut Graph, t: &Tensor| -> Result<NodeId> { Ok(g.constant(t.reshape(vec![1, t.numel()])?)) };
    let (x, s, i) = (row(&mut g, e_x)?, row(&mut g, e_s)?, row(&mut g, e_i)?);
    let n = fuse_graph(&mut g, &p, config, x, s, i)?;
    let vec_of = |id: NodeId| {
        let t = g.value(id);
        t.reshape(vec![t.numel()])
    };
    Ok(FusionOutput {
        e_is: g.value(n.e_is).clone(),
        o_mha: vec_of(n.o_mha)?,
        v_diff: vec_of(n.v_diff)?,
        o_s: vec_of(n.o_s)?,
        o_x: vec_of(n.o_x)?,
        e_combined: vec_of(n.e_combined)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_block(params: &mut ParamSet, prefix: &str, d: usize) {
        for p in PROJECTIONS {
            params.insert(format!("{prefix}.w_{p}"), Tensor::eye(d));
            params.insert(format!("{prefix}.b_{p}"), Tensor::zeros(&[d]));
        }
    }

    fn attend(params: &ParamSet, q: Tensor, k: Tensor, v: Tensor, heads: usize) -> (Tensor, Vec<Tensor>) {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let q = g.constant(q);
        let k = g.constant(k);
        let v = g.constant(v);
        let a = multi_head_attention(&mut g, &b, "t", q, k, v, 1, heads).unwrap();
        (g.value(a.output).clone(), a.weights.iter().map(|w| g.value(*w).clone()).collect())
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut params = ParamSet::new();
        identity_block(&mut params, "t", 3);
        let v = Tensor::from_rows(&[&[0.5, -1.0, 2.0]]);
        for q in [[9.0, 0.0, -3.0], [0.0, 0.0, 0.0]] {
            let (out, _) = attend(&params, Tensor::from_rows(&[&q]), v.clone(), v.clone(), 1);
            assert_eq!(out, v);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let mut params = ParamSet::new();
        identity_block(&mut params, "t", 2);
        let k = Tensor::from_rows(&[&[0.7, -1.3], &[0.7, -1.3]]);
        let v = Tensor::from_rows(&[&[0.0, 1.0], &[4.0, 3.0]]);
        let (out, w) = attend(&params, Tensor::from_rows(&[&[5.0, 2.0]]), k, v, 1);
        assert_eq!(out.data(), &[2.0, 2.0]);
        assert_eq!(w[0].data(), &[0.5, 0.5]);
    }

    #[test]
    fn differential_vector_identities() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[&[0.3, -0.8]]));
        let w = g.constant(Tensor::from_rows(&[&[2.0, 1.0], &[-1.0, 4.0]]));
        let zero = g.constant(Tensor::zeros(&[2]));
        let v = differential_vector(&mut g, x, x, w, zero).unwrap();
        assert_eq!(g.value(v).data(), &[0.0, 0.0]);

        let wz = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::vector(vec![0.25, -1.5]).unwrap());
        let y = g.constant(Tensor::from_rows(&[&[7.0, 1.0]]));
        let v = differential_vector(&mut g, x, y, wz, b).unwrap();
        assert_eq!(g.value(v).data(), &[0.25, -1.5]);

        let eye = g.constant(Tensor::eye(2));
        let o = g.constant(Tensor::from_rows(&[&[1.5, -1.0]]));
        let e = g.constant(Tensor::from_rows(&[&[0.5, 1.0]]));
        let v = differential_vector(&mut g, o, e, eye, zero).unwrap();
        assert_eq!(g.value(v).data(), &[1.0, -2.0]);
    }

    #[test]
    fn concat_sticker_orders_image_first_and_splits_back() {
        let mut g = Graph::new();
        let ei = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let es = g.constant(Tensor::from_rows(&[&[-1.0, -2.0], &[-3.0, -4.0]]));
        let seq = concat_sticker(&mut g, ei, es).unwrap();
        let v = g.value(seq);
        assert_eq!(v.row(0), &[1.0, 2.0]);
        assert_eq!(v.row(1), &[-1.0, -2.0]);
        assert_eq!(v.row(2), &[3.0, 4.0]);
        assert_eq!(v.row(3), &[-3.0, -4.0]);

        let zero = g.constant(Tensor::zeros(&[1, 3]));
        let z = concat_sticker(&mut g, zero, zero).unwrap();
        assert_eq!(g.value(z), &Tensor::zeros(&[2, 3]));

        let bad = g.constant(Tensor::zeros(&[1, 2]));
        assert!(concat_sticker(&mut g, zero, bad).is_err());
    }

    #[test]
    fn head_count_must_divide_width() {
        let mut params = ParamSet::new();
        identity_block(&mut params, "t", 3);
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let q = g.constant(Tensor::zeros(&[1, 3]));
        assert!(multi_head_attention(&mut g, &b, "t", q, q, q, 1, 2).is_err());
    }

    #[test]
    fn zero_everything_but_combined_bias() {
        let config = FusionConfig::new(4, 1);
        let mut params = ParamSet::new();
        init_params(&config, &mut ChaCha8Rng::seed_from_u64(0), &mut params);
        for (name, t) in params.iter_mut() {
            let fill = if name == B_E { 0.75 } else { 0.0 };
            t.data_mut().fill(fill);
        }
        let z = Tensor::zeros(&[4]);
        let out = fuse(&z, &z, &z, &params, &config).unwrap();
        assert_eq!(out.e_combined.data(), &[0.75; 4]);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let config = FusionConfig::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        init_params(&config, &mut rng, &mut params);
        let rows: Vec<Tensor> = (0..3).map(|_| crate::params::uniform(&mut rng, &[3, 4], 1.0)).collect();
        let run = |order: &[usize]| {
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let pick = |t: &Tensor| {
                let data = order.iter().flat_map(|&r| t.row(r).to_vec()).collect();
                Tensor::matrix(3, 4, data).unwrap()
            };
            let x = g.constant(pick(&rows[0]));
            let s = g.constant(pick(&rows[1]));
            let i = g.constant(pick(&rows[2]));
            let n = fuse_graph(&mut g, &b, &config, x, s, i).unwrap();
            g.value(n.e_combined).clone()
        };
        let base = run(&[0, 1, 2]);
        let perm = run(&[2, 0, 1]);
        assert_eq!(perm.row(0), base.row(2));
        assert_eq!(perm.row(1), base.row(0));
        assert_eq!(perm.row(2), base.row(1));
    }
}
