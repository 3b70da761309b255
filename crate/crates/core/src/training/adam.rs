//! Adam optimizer over a flat list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::numerics::tape::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter count changed");
        assert_eq!(grads.len(), params.len(), "adam: gradient count mismatch");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.numel(), g.numel(), "adam: gradient shape mismatch");
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_steps_with_unit_gradient() {
        let cfg = AdamConfig::default();
        let mut p = vec![Tensor::new(vec![1], vec![0.5])];
        let g = vec![Tensor::new(vec![1], vec![1.0])];
        let mut adam = Adam::new(cfg, &p);
        // By hand: m_t = 1 − 0.9^t, v_t = 1 − 0.999^t, so both bias-corrected
        // moments equal 1 and every step moves by lr/(1 + eps).
        let mut expect = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=3 {
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let m_hat: f64 = m / (1.0 - 0.9f64.powi(t));
            let v_hat: f64 = v / (1.0 - 0.999f64.powi(t));
            expect -= 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
            adam.update(&mut p, &g);
            assert!((p[0].data()[0] - expect).abs() < 1e-12);
        }
        assert!((p[0].data()[0] - (0.5 - 3e-3 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let start = vec![Tensor::new(vec![3], vec![0.1, -2.0, 7.5])];
        let mut p = start.clone();
        let mut adam = Adam::new(cfg, &p);
        for k in 0..50 {
            let g = vec![Tensor::new(vec![3], vec![k as f64, -1.0, 1e6])];
            adam.update(&mut p, &g);
        }
        assert_eq!(p, start);
    }
}
