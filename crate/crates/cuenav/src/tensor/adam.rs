//! Adam optimizer.

use std::collections::HashMap;

use super::params::ParamStore;
use super::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    moments: HashMap<usize, (Tensor<T>, Tensor<T>)>,
    step_count: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            moments: HashMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over the listed parameters. Trainable parameters must have
    /// gradients; non-trainable ones are left bit-identical. All gradient
    /// accumulators among the listed parameters are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<T>, params: &[usize]) -> Result<()> {
        for &idx in params {
            let p = store.get(idx);
            if p.trainable && p.grad.is_none() {
                return Err(TensorError::MissingGradient(p.name.clone()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let lr = T::from_f64(self.cfg.learning_rate);
        let eps = T::from_f64(self.cfg.epsilon);
        let bc1 = T::ONE - b1.powi(t);
        let bc2 = T::ONE - b2.powi(t);
        for &idx in params {
            let trainable = store.get(idx).trainable;
            if !trainable {
                store.get_mut(idx).grad = None;
                continue;
            }
            let shape = store.get(idx).value.shape().to_vec();
            let (m, v) = self
                .moments
                .entry(idx)
                .or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
            let p = store.get_mut(idx);
            let grad = p.grad.take().expect("checked above");
            for (((pv, &g), mv), vv) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (T::ONE - b1) * g;
                *vv = b2 * *vv + (T::ONE - b2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² on step one, so the update is lr·g/(|g|+ε) ≈ lr.
        let mut store: ParamStore<f64> = ParamStore::new();
        let idx = store.add("w", Tensor::scalar(1.0), true);
        store.accumulate_grad(idx, &Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        });
        adam.step(&mut store, &[idx]).unwrap();
        let got = store.get(idx).value.item();
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
        assert!(store.get(idx).grad.is_none(), "gradient cleared");
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let idx = store.add("w", Tensor::scalar(2.5), true);
        store.accumulate_grad(idx, &Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &[idx]).unwrap();
        assert_eq!(store.get(idx).value.item(), 2.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn non_trainable_parameter_is_bit_identical_after_steps() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let idx = store.add(
            "frozen",
            Tensor::from_vec(&[3], vec![0.1f32, -0.2, 0.3]).unwrap(),
            false,
        );
        let before = store.get(idx).value.data().to_vec();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            store.accumulate_grad(idx, &Tensor::full(&[3], 1.0));
            adam.step(&mut store, &[idx]).unwrap();
        }
        let after = store.get(idx).value.data();
        assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let idx = store.add("w", Tensor::scalar(1.0), true);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(
            adam.step(&mut store, &[idx]),
            Err(TensorError::MissingGradient(_))
        ));
    }
}
