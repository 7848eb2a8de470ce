//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its slot.
    pub fn add(&mut self, name: &str, value: Tensor) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.names.len() - 1
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`.
    pub fn add_scaled<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> usize {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_shape_fn((rows, cols), |_| normal.sample(rng));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Places every parameter on the graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Copies values from `other` for every name both sets share with
    /// matching shapes; errors on a shape conflict.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<usize> {
        let mut n = 0;
        for (name, t) in other.iter() {
            if let Some(i) = self.slot(name) {
                if self.tensors[i].dim() != t.dim() {
                    return Err(Error::Data(format!(
                        "parameter {name}: shape {:?} vs {:?}",
                        self.tensors[i].dim(),
                        t.dim()
                    )));
                }
                self.tensors[i].assign(t);
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
