//! Named trainable parameters.

use std::collections::HashMap;

use super::{Result, Scalar, Tensor, TensorError};
use crate::seed;
use crate::seed::gaussian;

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
}

/// Flat collection of parameters addressed by dot-separated path names
/// (e.g. `encoder.block2.conv1.weight`).
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name '{name}'"
        );
        let idx = self.params.len();
        self.index.insert(name.to_string(), idx);
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            trainable,
        });
        idx
    }

    /// Gaussian init with the given std. The stream is derived from the
    /// parameter's own name, so adding or resizing one parameter never
    /// shifts the draws of any other.
    pub fn add_randn(&mut self, name: &str, shape: &[usize], std: f64, init_seed: u64) -> usize {
        let mut rng = seed::substream(init_seed, "init", seed::stable_hash(0, name, 0));
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::from_f64(gaussian(&mut rng) * std))
            .collect();
        self.add(name, Tensor::from_vec(shape, data).unwrap(), true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn idx(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param<T>> {
        Ok(self.get(self.idx(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Mark every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn accumulate_grad(&mut self, idx: usize, delta: &Tensor<T>) {
        let p = &mut self.params[idx];
        match &mut p.grad {
            Some(g) => {
                for (o, &v) in g.data_mut().iter_mut().zip(delta.data()) {
                    *o += v;
                }
            }
            None => p.grad = Some(delta.clone()),
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Indices of parameters matching any of the given name prefixes.
    pub fn indices_with_prefixes(&self, prefixes: &[&str]) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| prefixes.iter().any(|pre| p.name.starts_with(pre)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// He-style std for a conv/fc layer with the given fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
