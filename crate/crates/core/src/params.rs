//! Named parameter storage and per-pass binding into graph leaves.
//!
//! Values are kept at `f32` precision (stored as `f64`) so that checkpoints,
//! which carry 32-bit payloads, reproduce the training state bit for bit.

use std::collections::BTreeMap;

use mimnet_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MimError, Result};

/// Rounds to the nearest `f32`.
pub fn to_storage(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let value = value.into_iter().map(to_storage).collect();
        self.params.insert(
            name.into(),
            Param {
                shape: shape.to_vec(),
                value,
            },
        );
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, shape, vec![0.0; shape.iter().product()]);
    }

    /// Normal initialisation with the given standard deviation.
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        self.insert(name, shape, (0..n).map(|_| dist.sample(rng)).collect());
    }

    /// Uniform in ±1/sqrt(fan_in), where fan-in is the product of all but the
    /// leading extent for kernels, or the leading extent for `[in, out]`
    /// matrices.
    pub fn fan_in_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        self.insert(name, shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect());
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Fresh leaves for one forward pass; `trainable` decides which of them
    /// record gradients.
    pub fn bind(&self, trainable: impl Fn(&str) -> bool) -> Bound {
        let leaves = self
            .params
            .iter()
            .map(|(name, p)| {
                let t = Tensor::from_vec(&p.shape, p.value.clone()).expect("stored shapes are valid");
                let t = if trainable(name) { t.with_requires_grad(true) } else { t };
                (name.clone(), t)
            })
            .collect();
        Bound { leaves }
    }

    /// Same names, shapes and values, bit for bit.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape == b.shape
                    && a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// The leaves of one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    leaves: BTreeMap<String, Tensor>,
}

impl Bound {
    /// Leaves supplied by the caller, e.g. the probes of a finite-difference
    /// check.
    pub fn from_leaves(leaves: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        Bound {
            leaves: leaves.into_iter().collect(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.leaves
            .get(name)
            .ok_or_else(|| MimError::Contract(format!("parameter `{name}` is not registered")))
    }

    /// Gradients of every trainable leaf that received one.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.leaves
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}
