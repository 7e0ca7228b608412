//! Bias-corrected Adam.

use crate::param::ParamStore;
use crate::{Parameter, Real};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every parameter of one store. Bias correction uses
/// each parameter's own update count, so a block unfrozen late starts from
/// a correctly corrected first step.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    updates: Vec<u64>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| vec![T::zero(); p.tensor.len()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            updates: vec![0; store.len()],
            t: 0,
        }
    }

    /// Number of `step` calls so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. `grads[i]` is the gradient of parameter `i`; frozen
    /// parameters and parameters without a gradient are left untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Option<Vec<T>>],
        lr_of: impl Fn(&Parameter<T>) -> f64,
    ) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (i, p) in store.iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref() else { continue };
            if !p.trainable {
                continue;
            }
            self.updates[i] += 1;
            let k = self.updates[i] as i32;
            let lr = lr_of(p);
            let c1 = 1.0 - beta1.powi(k);
            let c2 = 1.0 - beta2.powi(k);
            let (b1, b2) = (T::lit(beta1), T::lit(beta2));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j].as_f64() / c1;
                let vhat = v[j].as_f64() / c2;
                *w = *w - T::lit(lr * mhat / (vhat.sqrt() + eps));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::from_fn(&[3], |i| i as f64)).unwrap();
        let before = s.by_name("w").unwrap().tensor.clone();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s, &[Some(vec![0.0; 3])], |_| 0.001);
        assert_eq!(s.by_name("w").unwrap().tensor, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // t=1: m = 0.1 g, v = 0.001 g^2, mhat = g, vhat = g^2,
        // update = lr * g / (|g| + eps) = lr / (1 + 1e-8) for g = 1.
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::scalar(0.5)).unwrap();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s, &[Some(vec![1.0])], |_| 0.001);
        let want = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((s.by_name("w").unwrap().tensor.item() - want).abs() < 1e-15);
    }

    #[test]
    fn frozen_param_is_bit_identical() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::full(&[4], 0.25)).unwrap();
        s.get_mut(id).trainable = false;
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s, &[Some(vec![3.0; 4])], |_| 0.1);
        assert!(s.get(id).tensor.data().iter().all(|v| v.to_bits() == 0.25f32.to_bits()));
    }
}
