use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty coefficient folded into the gradient (`g + decay * theta`).
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, decay: f64) -> Self {
        self.weight_decay = decay;
        self
    }
}

/// Moment estimates, kept separately so they can be checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            state: AdamState {
                step: 0,
                m: vec![T::zero(); num_params],
                v: vec![T::zero(); num_params],
            },
        }
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.state.m.len());
        let c = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let decay = T::of(c.weight_decay);
        let one = T::one();
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.state.m.iter_mut())
            .zip(self.state.v.iter_mut())
        {
            let g = if c.weight_decay > 0.0 { g + decay * *p } else { g };
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
