use std::collections::BTreeMap;

use super::{Gradients, Tensor2};
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor2>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.tensors.get_mut(name)
    }

    /// Panics on a missing name; model code only asks for names it created.
    pub fn expect(&self, name: &str) -> &Tensor2 {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not in store"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor2::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Classical momentum SGD with L2 weight decay folded into the gradient:
/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Tensor2>,
}

impl SgdState {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor2> {
        self.velocity.get(name)
    }

    /// Updates every parameter that has a gradient. Gradients are validated
    /// up front so a bad step leaves both parameters and velocity untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let Some(w) = params.get(name) else { continue };
            if g.shape() != w.shape() {
                return Err(Error::Shape {
                    node: 0,
                    op: "sgd_step",
                    detail: format!(
                        "gradient for `{name}` is {}x{}, parameter is {}x{}",
                        g.rows(),
                        g.cols(),
                        w.rows(),
                        w.cols()
                    ),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        let SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
        } = self.config;
        for (name, g) in grads.iter() {
            let Some(w) = params.get_mut(name) else {
                continue;
            };
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Tensor2::zeros(w.rows(), w.cols()));
            for ((vi, wi), &gi) in v.data_mut().iter_mut().zip(w.data_mut()).zip(g.data()) {
                *vi = momentum * *vi + (gi + wd * *wi);
                *wi -= lr * *vi;
            }
            if !w.is_finite() {
                return Err(Error::NonFiniteParameter(name.to_string()));
            }
        }
        Ok(())
    }
}
