//! Named parameter/buffer store.
//!
//! Buffers (batch-norm running statistics) are distinguished from
//! trainable tensors by the `.running_mean` / `.running_var` name suffix,
//! which is also how the checkpoint loader restores the split; the
//! container format itself carries no flags.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    map: BTreeMap<String, Param<T>>,
}

pub fn is_buffer_name(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        let trainable = !is_buffer_name(&name);
        self.map.insert(name, Param { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let p = self
            .map
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        p.tensor = tensor;
        Ok(())
    }

    /// Iterates in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of scalar elements across trainable tensors.
    pub fn trainable_elements(&self) -> u64 {
        self.map
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel() as u64)
            .sum()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.map
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (k, p) in &self.map {
            out.map.insert(
                k.clone(),
                Param {
                    tensor: p.tensor.cast::<U>(),
                    trainable: p.trainable,
                },
            );
        }
        out
    }
}

/// Truncated normal (+-2 std) initialization used for projection weights.
pub fn init_trunc_normal<T: Real>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.trunc_normal(std)))
}

/// Kaiming-style normal init for convolution weights
/// (`std = sqrt(2 / fan_in)` with `fan_in = C_in/groups * kh * kw`).
pub fn init_conv_kaiming<T: Real>(rng: &mut Rng, shape: &[usize]) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.normal() * std))
}
