//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Parameter<T>]) -> Self {
        Self {
            config,
            step: 0,
            first: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            second: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    /// One update with learning rate `lr`; non-trainable parameters and their
    /// moments are left untouched.
    pub fn step(&mut self, params: &mut [Parameter<T>], lr: f64) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "optimizer/parameter count mismatch"
        );
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 / (1.0 - beta1.powi(t));
        let c2 = 1.0 / (1.0 - beta2.powi(t));
        let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(epsilon));
        let (c1, c2, lr) = (T::of(c1), T::of(c2), T::of(lr));
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales all trainable gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(params: &mut [Parameter<T>], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g.to_f64_lossy().powi(2))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for p in params.iter_mut().filter(|p| p.trainable) {
            p.grad.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Parameter<f64> {
        let mut p = Parameter::new("p", Tensor::full([1, 1, 1, 1], v));
        p.grad.fill(g);
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.25, 1e-3] {
            let mut ps = vec![scalar_param(1.0, g)];
            let mut opt = Adam::new(AdamConfig::default(), &ps);
            opt.step(&mut ps, 1e-3);
            let delta = 1.0 - ps[0].value.data()[0];
            let expected = 1e-3 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-12, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut ps = vec![scalar_param(2.5, 0.0)];
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        for _ in 0..3 {
            opt.step(&mut ps, 1e-2);
        }
        assert_eq!(ps[0].value.data()[0], 2.5);
    }

    #[test]
    fn frozen_parameter_does_not_move() {
        let mut ps = vec![scalar_param(1.0, 5.0), scalar_param(1.0, 5.0)];
        ps[1].trainable = false;
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.step(&mut ps, 0.1);
        assert_ne!(ps[0].value.data()[0], 1.0);
        assert_eq!(ps[1].value.data()[0], 1.0);
        assert_eq!(opt.first[1].data()[0], 0.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut ps = vec![scalar_param(0.0, 3.0), scalar_param(0.0, 4.0)];
        let n = clip_grad_norm(&mut ps, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        let after: f64 = ps
            .iter()
            .map(|p| p.grad.data()[0].powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
