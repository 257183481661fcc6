//! Named parameter collections and their initialisation.

use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::Tensor;

/// An ordered map from parameter name to tensor. Names are dotted paths
/// such as `mtb.b0.conv.w`; ordering is lexicographic, which fixes the
/// order of every reduction over parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Moves every tensor of `other` into `self`.
    pub fn extend(&mut self, other: Params) {
        self.tensors.extend(other.tensors);
    }

    /// Parameters whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Params {
        Params {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (k, v) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                v.data_mut().fill(0.0);
            }
        }
    }

    pub fn zero_all(&mut self) {
        for v in self.tensors.values_mut() {
            v.data_mut().fill(0.0);
        }
    }

    /// Zeroes every tensor named `*.b` (biases).
    pub fn zero_biases(&mut self) {
        for (k, v) in self.tensors.iter_mut() {
            if k.ends_with(".b") {
                v.data_mut().fill(0.0);
            }
        }
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }
}

impl FromIterator<(String, Tensor)> for Params {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Params {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Uniform `±sqrt(6 / (fan_in + fan_out))` initialisation.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

/// Uniform `±sqrt(6 / fan_in)` initialisation for layers followed by a rectifier.
pub fn he(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}
