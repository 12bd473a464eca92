//! Named parameter storage with per-parameter Adam state.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// How a parameter is filled at creation. Weight matrices draw uniformly
/// from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; biases start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    Uniform { fan_in: usize },
    Zeros,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init: ParamInit::Uniform { fan_in },
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init: ParamInit::Zeros,
        }
    }
}

/// One learnable tensor plus its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    fn fresh(value: Tensor) -> Self {
        let n = value.numel();
        Parameter {
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// All learnable tensors, addressable by name. Iteration order is the
/// sorted name order, so updates and checkpoints are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a store from specs, drawing initial values in spec order
    /// from a seeded generator.
    pub fn from_specs(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for spec in specs {
            let numel: usize = spec.shape.iter().product();
            let data = match spec.init {
                ParamInit::Zeros => vec![0.0; numel],
                ParamInit::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..numel).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            store.register(&spec.name, Tensor::new(spec.shape.clone(), data))?;
        }
        Ok(store)
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), Parameter::fresh(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub(crate) fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// One Adam update. Parameters missing from `grads` are treated as
    /// having a zero gradient (their moments still decay and their step
    /// counter still advances).
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) {
        for (name, param) in self.params.iter_mut() {
            param.step += 1;
            let t = param.step as i32;
            let bias1 = 1.0 - cfg.beta1.powi(t);
            let bias2 = 1.0 - cfg.beta2.powi(t);
            let grad = grads.get(name).map(|g| {
                assert_eq!(
                    g.shape(),
                    param.value.shape(),
                    "adam_step: gradient shape {:?} for parameter {name:?} of shape {:?}",
                    g.shape(),
                    param.value.shape()
                );
                g.data()
            });
            for i in 0..param.value.numel() {
                let g = grad.map_or(0.0, |g| g[i]);
                param.m[i] = cfg.beta1 * param.m[i] + (1.0 - cfg.beta1) * g;
                param.v[i] = cfg.beta2 * param.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = param.m[i] / bias1;
                let v_hat = param.v[i] / bias2;
                param.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}
