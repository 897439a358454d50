//! Adam with global-norm gradient clipping, plus the plateau LR scheduler.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

pub struct Adam<T> {
    pub cfg: AdamConfig,
    step_count: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step_count
    }

    /// The global L2 norm of a gradient set.
    pub fn global_norm(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
        grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v.to_f64() * v.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Clips (in place) so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
        let norm = Self::global_norm(grads);
        if norm > max_norm && norm > 0.0 {
            let s = T::from_f64(max_norm / norm);
            for g in grads.values_mut() {
                for v in g.data_mut() {
                    *v = *v * s;
                }
            }
        }
        norm
    }

    /// One optimization step: NaN screening, clipping, then the
    /// bias-corrected Adam update on every trainable parameter that has a
    /// gradient. Buffers are never touched.
    pub fn step(&mut self, store: &mut ParameterStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, g) in grads {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Train(format!("non-finite gradient for parameter {name}")));
            }
        }
        let mut grads = grads.clone();
        if let Some(max_norm) = self.cfg.clip_norm {
            Self::clip_global_norm(&mut grads, max_norm);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);

        for (name, g) in &grads {
            let p = store.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for i in 0..gd.len() {
                let gi = gd[i].to_f64();
                let mi = b1 * md[i].to_f64() + (1.0 - b1) * gi;
                let vi = b2 * vd[i].to_f64() + (1.0 - b2) * gi * gi;
                md[i] = T::from_f64(mi);
                vd[i] = T::from_f64(vi);
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let upd = self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                pd[i] = T::from_f64(pd[i].to_f64() - upd);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate when the monitored value has not improved for
/// `patience` consecutive observations.
#[derive(Clone, Debug)]
pub struct ReduceLrOnPlateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        ReduceLrOnPlateau {
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feeds one observation (lower is better); returns the possibly
    /// reduced learning rate.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.stale = 0;
            lr
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.stale = 0;
                lr * self.factor
            } else {
                lr
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("w", Tensor::full(&[3], 2.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::<f32>::zeros(&[3]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn quadratic_converges_in_200_steps() {
        // f(x) = x^2, grad = 2x, lr = 0.1
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            clip_norm: None,
            ..AdamConfig::default()
        });
        for _ in 0..200 {
            let x = store.get("x").unwrap().data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Tensor::scalar(2.0 * x));
            adam.step(&mut store, &grads).unwrap();
        }
        assert!(store.get("x").unwrap().data()[0].abs() < 1e-2);
    }

    #[test]
    fn clip_scales_large_gradients() {
        let mut grads = BTreeMap::new();
        grads.insert("g".to_string(), Tensor::<f64>::full(&[4], 5.0));
        // norm = 10
        let before = Adam::global_norm(&grads);
        assert!((before - 10.0).abs() < 1e-12);
        Adam::clip_global_norm(&mut grads, 1.0);
        let after = Adam::global_norm(&grads);
        assert!(after <= 1.0 + 1e-6);
        assert!((grads["g"].data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_reported_with_name() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("w", Tensor::full(&[1], 1.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::<f32>::new(vec![1], vec![f32::NAN]).unwrap());
        let mut adam = Adam::new(AdamConfig::default());
        match adam.step(&mut store, &grads) {
            Err(Error::Train(msg)) => assert!(msg.contains('w')),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plateau_scheduler_halves_after_patience() {
        let mut sched = ReduceLrOnPlateau::new(0.5, 3);
        let mut lr = 1e-4;
        lr = sched.observe(1.0, lr);
        for _ in 0..2 {
            lr = sched.observe(1.5, lr);
        }
        assert_eq!(lr, 1e-4);
        lr = sched.observe(1.5, lr);
        assert!((lr - 5e-5).abs() < 1e-20);
    }
}
