//! One-step actor-critic training under a Lagrangian cost budget.

mod budget;
mod loss;
mod optim;
mod reward;
mod trainer;

pub use budget::{BudgetController, Curriculum};
pub use loss::{
    compute_gradients, losses, total_loss, Gradient, LossBreakdown, LossCoefficients,
    SampleOutcome, Transition,
};
pub use optim::{clip_global_norm, optimizer_step, Adam, AdamConfig};
pub use reward::{bce_with_logit, fuse_scores, fused_similarity, modality_scores, reward};
pub use trainer::{read_step_csv, train, write_step_csv, StepRecord, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Entropy bonus weight.
    pub entropy_coeff: f64,
    /// Critic loss weight.
    pub critic_weight: f64,
    pub lambda_init: f64,
    /// Lagrange multiplier step size.
    pub eta: f64,
    pub target_cost: f64,
    pub epochs: usize,
    pub seed: u64,
    pub curriculum: Curriculum,
    pub pairs_per_epoch: usize,
    pub positive_fraction: f64,
    /// Write a checkpoint every this many epochs (CLI only).
    pub checkpoint_every: Option<usize>,
    pub adam: AdamConfig,
    pub agent: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 8,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            entropy_coeff: 0.01,
            critic_weight: 0.5,
            lambda_init: 0.1,
            eta: 5e-3,
            target_cost: 0.45,
            epochs: 300,
            seed: 0,
            curriculum: Curriculum::default(),
            pairs_per_epoch: 200,
            positive_fraction: 0.5,
            checkpoint_every: None,
            adam: AdamConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !pos(self.learning_rate) {
            errs.push("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive");
        }
        if !nonneg(self.weight_decay) {
            errs.push("weight_decay must be non-negative");
        }
        if !pos(self.clip_norm) {
            errs.push("clip_norm must be positive");
        }
        if !nonneg(self.entropy_coeff) {
            errs.push("entropy_coeff must be non-negative");
        }
        if !nonneg(self.critic_weight) {
            errs.push("critic_weight must be non-negative");
        }
        if !nonneg(self.lambda_init) {
            errs.push("lambda_init must be non-negative");
        }
        if !pos(self.eta) {
            errs.push("eta must be positive");
        }
        if !(self.target_cost > 0.0 && self.target_cost <= 1.0) {
            errs.push("target_cost must lie in (0, 1]");
        }
        if self.epochs == 0 {
            errs.push("epochs must be positive");
        }
        if self.pairs_per_epoch == 0 {
            errs.push("pairs_per_epoch must be positive");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            errs.push("positive_fraction must lie in (0, 1)");
        }
        if !(self.curriculum.start >= self.target_cost && self.curriculum.start <= 1.0) {
            errs.push("curriculum.start must lie in [target_cost, 1]");
        }
        if !(0.0..=1.0).contains(&self.curriculum.warmup_fraction) {
            errs.push("curriculum.warmup_fraction must lie in [0, 1]");
        }
        if self.checkpoint_every == Some(0) {
            errs.push("checkpoint_every must be positive when set");
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && pos(a.eps)) {
            errs.push("adam betas must lie in [0, 1) and eps must be positive");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
