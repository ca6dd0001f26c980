use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update at learning rate `lr` and then
    /// clears every gradient. Fails without touching any parameter if some
    /// gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return contract_err("optimizer state does not match parameter store");
        }
        if let Some((name, _)) = store.iter().find(|(_, t)| t.grad().is_none()) {
            return contract_err(format!("parameter `{name}` has no gradient"));
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            let g = t.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![w]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = scalar_store(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        store.zero_grads();
        adam.step(&mut store, 1e-3).unwrap();
        assert_eq!(store.iter().next().unwrap().1.data(), &[1.5]);
        assert!(store.iter().next().unwrap().1.grad().is_none());
    }

    #[test]
    fn moves_against_gradient() {
        for g in [2.0, -0.3] {
            let mut store = scalar_store(0.0);
            let mut adam = Adam::new(AdamConfig::default(), &store);
            store.tensors_mut()[0].accumulate_grad(&[g]).unwrap();
            adam.step(&mut store, 1e-2).unwrap();
            let w = store.iter().next().unwrap().1.data()[0];
            assert!(w * g < 0.0);
        }
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        assert!(matches!(adam.step(&mut store, 1e-3), Err(crate::Error::Contract(_))));
    }

    /// Scalar simulation oracle: Adam on (w-3)^2 written out by hand.
    #[test]
    fn quadratic_converges_monotonically() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let (mut m, mut v, mut w_ref) = (0.0f64, 0.0f64, 0.0f64);
        let mut prev = 0.0;
        for step in 1..=10 {
            let w = store.iter().next().unwrap().1.data()[0];
            store.tensors_mut()[0].accumulate_grad(&[2.0 * (w - 3.0)]).unwrap();
            adam.step(&mut store, 0.1).unwrap();
            let g = 2.0 * (w_ref - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(step));
            let vh = v / (1.0 - 0.999f64.powi(step));
            w_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);
            let w_new = store.iter().next().unwrap().1.data()[0];
            assert!((w_new - w_ref).abs() < 1e-12);
            assert!(w_new > prev && w_new < 3.0);
            prev = w_new;
        }
    }
}
