use serde::{Deserialize, Serialize};

use super::Parameter;

/// Adam hyperparameters. Weight decay is decoupled from the moment estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based) using each
/// parameter's accumulated `grad`. Gradients are left untouched.
pub fn adam_step(params: &mut [Parameter], t: u64, cfg: &AdamConfig) {
    assert!(t >= 1, "Adam steps are counted from 1");
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for p in params.iter_mut() {
        let value = p.value.data_mut();
        let (grad, m, v) = (p.grad.data(), p.m.data_mut(), p.v.data_mut());
        for k in 0..value.len() {
            let g = grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            value[k] = value[k] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar(theta: f64, grad: f64) -> Vec<Parameter> {
        let mut p = Parameter::new("theta", Tensor::filled(&[1], theta));
        p.grad = Tensor::filled(&[1], grad);
        vec![p]
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut ps = scalar(0.7, 0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut ps, 1, &cfg);
        assert_eq!(ps[0].value.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = scalar(1.0, 1.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut ps, 1, &cfg);
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let delta = ps[0].value.data()[0] - 1.0;
        assert!((delta + cfg.lr).abs() < 1e-12, "delta {delta}");
    }

    #[test]
    fn decay_only() {
        let mut ps = scalar(1.0, 0.0);
        adam_step(&mut ps, 1, &AdamConfig::default());
        assert!((ps[0].value.data()[0] - (1.0 - 1e-5 * 1e-4)).abs() < 1e-18);
    }
}
