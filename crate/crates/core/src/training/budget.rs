//! Lagrange multiplier on normalized cost, with a tightening cost target.

use serde::{Deserialize, Serialize};

/// Linear anneal of the cost target from `start` to the final target over the
/// first `warmup_fraction` of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Curriculum {
    pub start: f64,
    pub warmup_fraction: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self {
            start: 0.9,
            warmup_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetController {
    pub lambda: f64,
    pub eta: f64,
    pub target_final: f64,
    pub curriculum: Curriculum,
    /// Target in force for the current epoch.
    pub target: f64,
}

impl BudgetController {
    pub fn new(lambda: f64, eta: f64, target_final: f64, curriculum: Curriculum) -> Self {
        Self {
            lambda,
            eta,
            target_final,
            curriculum,
            target: curriculum.start,
        }
    }

    /// `lambda <- max(0, lambda + eta * (mean_cost - target))`.
    pub fn update_lambda(&mut self, mean_cost: f64) -> f64 {
        self.lambda = (self.lambda + self.eta * (mean_cost - self.target)).max(0.0);
        self.lambda
    }

    pub fn curriculum_target(&self, epoch: usize, total_epochs: usize) -> f64 {
        let warmup = self.curriculum.warmup_fraction * total_epochs as f64;
        let e = epoch as f64;
        if warmup <= 0.0 || e >= warmup {
            return self.target_final;
        }
        let start = self.curriculum.start;
        start + (self.target_final - start) * e / warmup
    }

    pub fn begin_epoch(&mut self, epoch: usize, total_epochs: usize) -> f64 {
        self.target = self.curriculum_target(epoch, total_epochs);
        self.target
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctrl(lambda: f64) -> BudgetController {
        let mut c = BudgetController::new(lambda, 0.005, 0.45, Curriculum::default());
        c.target = 0.45;
        c
    }

    #[test]
    fn lambda_updates() {
        let mut c = ctrl(0.1);
        let l = c.update_lambda(0.65);
        assert!((l - 0.101).abs() < 1e-15);
        assert_eq!(c.eta, 0.005);
        assert_eq!(c.target, 0.45);

        let mut zero = ctrl(0.0);
        assert_eq!(zero.update_lambda(0.30), 0.0);

        let mut eq = ctrl(0.1);
        assert_eq!(eq.update_lambda(0.45), 0.1);
    }

    #[test]
    fn curriculum_schedule() {
        let c = ctrl(0.1);
        assert_eq!(c.curriculum_target(0, 100), 0.9);
        assert!((c.curriculum_target(15, 100) - 0.675).abs() < 1e-15);
        assert_eq!(c.curriculum_target(30, 100), 0.45);
        assert_eq!(c.curriculum_target(99, 100), 0.45);
        let flat = BudgetController::new(
            0.1,
            0.005,
            0.45,
            Curriculum {
                start: 0.9,
                warmup_fraction: 0.0,
            },
        );
        assert_eq!(flat.curriculum_target(0, 10), 0.45);
    }

    proptest! {
        #[test]
        fn lambda_never_negative(l0 in 0.0f64..1.0, costs in prop::collection::vec(0.0f64..1.0, 1..50)) {
            let mut c = ctrl(l0);
            for m in costs {
                prop_assert!(c.update_lambda(m) >= 0.0);
            }
        }

        #[test]
        fn target_non_increasing(total in 1usize..400) {
            let c = ctrl(0.1);
            let mut prev = f64::INFINITY;
            for e in 0..total {
                let t = c.curriculum_target(e, total);
                prop_assert!(t <= prev);
                prev = t;
            }
            prop_assert!(c.curriculum_target(total - 1, total) >= 0.45);
        }
    }
}
