//! Named parameter storage shared by the encoders, fusion layer and heads.

use indexmap::IndexMap;
use rand::Rng;

use crate::tensor::{Graph, Gradients, NodeId, Scalar, Tensor};

/// Ordered collection of named trainable tensors. Names are dotted paths
/// such as `fusion.w_diff`; insertion order is the checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Replaces every tensor's contents, in order. Shapes must match.
    pub fn set_tensors(&mut self, values: &[Tensor]) {
        assert_eq!(values.len(), self.tensors.len());
        for (slot, v) in self.tensors.values_mut().zip(values) {
            assert_eq!(slot.shape(), v.shape());
            *slot = v.clone();
        }
    }

    /// Registers every tensor as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            ids: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(v)))
                .collect(),
        }
    }
}

/// Graph node ids for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    ids: IndexMap<String, NodeId>,
}

impl Bound {
    /// Panics when `name` was not bound; parameter names are fixed by construction.
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} is not bound"))
    }

    /// Gradients in [`ParamSet`] order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.ids
            .values()
            .map(|&id| grads.get(id).cloned().expect("parameters always require grad"))
            .collect()
    }
}

/// Glorot-uniform matrix `[rows, cols]`.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as Scalar).sqrt();
    uniform(rng, &[rows, cols], limit)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], limit: Scalar) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}
