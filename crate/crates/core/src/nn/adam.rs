//! Adam with bias correction.

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state. Parameters are identified by their position in the
/// slice passed to [`Adam::step`], which must be stable across calls.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update using each tensor's accumulated gradient. Tensors
    /// without a gradient buffer are left untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        if self.moments.len() < params.len() {
            self.moments.resize_with(params.len(), || (Vec::new(), Vec::new()));
        }
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if p.grad().is_none() {
                continue;
            }
            if m.len() != p.len() {
                *m = vec![T::zero(); p.len()];
                *v = vec![T::zero(); p.len()];
            }
            let (data, grad) = p.data_and_grad_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                data[i] -= step_size * m[i] / ((v[i]).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        w.grad_mut().iter_mut().for_each(|g| *g = 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut w]);
        for (a, b) in w.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((b - a - 0.001).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut w = Tensor::new(vec![2], vec![0.3f64, 0.4]).unwrap();
        w.grad_mut();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut [&mut w]);
        }
        assert_eq!(w.data(), [0.3, 0.4]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut w = Tensor::new(vec![2], vec![0.3f32, 0.4]).unwrap();
            let mut adam = Adam::new(AdamConfig::default());
            for i in 0..10 {
                w.zero_grad();
                w.grad_mut().copy_from_slice(&[i as f32 * 0.1, -0.2]);
                adam.step(&mut [&mut w]);
            }
            w.into_data()
        };
        assert_eq!(run(), run());
    }
}
