//! Global-norm clipping and Adam with coupled L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64, config: AdamConfig) -> Self {
        Self {
            lr,
            weight_decay,
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected update. Weight decay is added to the gradient
    /// before the moment estimates.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i] + self.weight_decay * params[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Clip, then Adam. Returns the pre-clip gradient norm. Parameters are left
/// untouched when the gradient is not finite.
pub fn optimizer_step(
    params: &mut AgentParams,
    grad: &mut [f64],
    state: &mut Adam,
    clip_norm: f64,
) -> Result<f64> {
    if grad.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    if let Some(block) = params.layout.first_non_finite(grad) {
        return Err(Error::Numeric {
            block: block.to_string(),
        });
    }
    let norm = clip_global_norm(grad, clip_norm);
    state.update(&mut params.values, grad);
    params.check_finite()?;
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clipping_halves_norm_two() {
        let mut g = vec![2.0, 0.0];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 2.0);
        assert_eq!(g, vec![1.0, 0.0]);

        let mut g = vec![1.2, 1.6];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn first_step_closed_form() {
        let mut adam = Adam::new(1, 5e-4, 0.0, AdamConfig::default());
        let mut p = vec![0.3];
        adam.update(&mut p, &[1.0]);
        assert!((p[0] - (0.3 - 5e-4 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let mut adam = Adam::new(3, 5e-4, 0.0, AdamConfig::default());
        let mut p = vec![0.1, -0.2, 0.3];
        for _ in 0..5 {
            adam.update(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn weight_decay_enters_the_moments() {
        let mut adam = Adam::new(1, 1e-3, 0.5, AdamConfig::default());
        let mut p = vec![2.0];
        // decayed gradient = 0 + 0.5 * 2.0 = 1.0 > 0, so the step is negative.
        adam.update(&mut p, &[0.0]);
        assert!((p[0] - (2.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn post_clip_norm_bounded(g in prop::collection::vec(-100.0f64..100.0, 1..50), c in 0.01f64..10.0) {
            let mut g = g;
            clip_global_norm(&mut g, c);
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(n <= c + 1e-9);
        }
    }
}
