//! Actor-critic losses and their analytic gradients.
//!
//! Per sample:
//!
//! ```text
//! actor  = -(r - V_detached) * log pi(a | X) - beta * H(pi)
//! critic = (r - V)^2
//! total  = mean(actor) + alpha * mean(critic)
//! ```
//!
//! Rewards are constants; nothing flows back through the similarity oracle.

use crate::agent::{
    backward, forward, sequence_log_prob, sequential_entropy, AgentParams, ForwardTrace,
};
use crate::error::{Error, Result};
use crate::pool::{JointAction, PoolSet};
use crate::simworld::SequenceSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub entropy_coeff: f64,
    pub critic_weight: f64,
}

/// What one sample contributed to a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub actor: f64,
    pub critic: f64,
    pub total: f64,
}

pub fn losses(batch: &[SampleOutcome], coeffs: LossCoefficients) -> LossBreakdown {
    let n = batch.len().max(1) as f64;
    let actor = batch
        .iter()
        .map(|s| -(s.reward - s.value) * s.log_prob - coeffs.entropy_coeff * s.entropy)
        .sum::<f64>()
        / n;
    let critic = batch
        .iter()
        .map(|s| (s.reward - s.value).powi(2))
        .sum::<f64>()
        / n;
    LossBreakdown {
        actor,
        critic,
        total: actor + coeffs.critic_weight * critic,
    }
}

/// A one-step episode: the probe the agent saw, the action it drew (indices
/// in draw order) and the reward that came back.
#[derive(Debug, Clone)]
pub struct Transition<'w> {
    pub probe: &'w SequenceSample,
    pub action: JointAction,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub losses: LossBreakdown,
    pub outcomes: Vec<SampleOutcome>,
}

fn outcome(
    trace: &ForwardTrace,
    pools: &PoolSet,
    action: &JointAction,
    reward: f64,
) -> SampleOutcome {
    let logits = trace.logits();
    let mut log_prob = 0.0;
    let mut entropy = 0.0;
    for ((z, sel), pool) in logits.iter().zip(action.per_modality()).zip(pools.pools()) {
        log_prob += sequence_log_prob(z, sel).0;
        entropy += sequential_entropy(z, pool.select_k).0;
    }
    SampleOutcome {
        reward,
        value: trace.value(),
        log_prob,
        entropy,
    }
}

/// Gradient of the mean total loss from cached forward traces.
pub(crate) fn gradient_from_traces(
    params: &AgentParams,
    pools: &PoolSet,
    traces: &[ForwardTrace],
    actions: &[JointAction],
    rewards: &[f64],
    coeffs: LossCoefficients,
) -> Result<Gradient> {
    let n = traces.len();
    if n == 0 || actions.len() != n || rewards.len() != n {
        return Err(Error::Shape(format!(
            "batch lengths disagree: {} traces, {} actions, {} rewards",
            n,
            actions.len(),
            rewards.len()
        )));
    }
    let scale = 1.0 / n as f64;
    let mut grad = vec![0.0; params.len()];
    let mut outcomes = Vec::with_capacity(n);
    for ((trace, action), &reward) in traces.iter().zip(actions).zip(rewards) {
        pools.check_action(action)?;
        let out = outcome(trace, pools, action, reward);
        let advantage = out.reward - out.value;
        let logits = trace.logits();
        let d_logits: Vec<Vec<f64>> = logits
            .iter()
            .zip(action.per_modality())
            .zip(pools.pools())
            .map(|((z, sel), pool)| {
                let (_, g_lp) = sequence_log_prob(z, sel);
                let (_, g_h) = sequential_entropy(z, pool.select_k);
                g_lp.iter()
                    .zip(&g_h)
                    .map(|(lp, h)| scale * (-advantage * lp - coeffs.entropy_coeff * h))
                    .collect()
            })
            .collect();
        let d_value = scale * coeffs.critic_weight * 2.0 * (out.value - out.reward);
        backward(params, trace, &d_logits, d_value, &mut grad);
        outcomes.push(out);
    }
    if let Some(block) = params.layout.first_non_finite(&grad) {
        return Err(Error::Numeric {
            block: block.to_string(),
        });
    }
    Ok(Gradient {
        values: grad,
        losses: losses(&outcomes, coeffs),
        outcomes,
    })
}

/// Gradient of the mean total loss with respect to every parameter, in the
/// canonical flattening order.
pub fn compute_gradients(
    params: &AgentParams,
    pools: &PoolSet,
    batch: &[Transition<'_>],
    coeffs: LossCoefficients,
) -> Result<Gradient> {
    params.dims.check_pools(pools)?;
    let traces = batch
        .iter()
        .map(|t| forward(params, &t.probe.frames))
        .collect::<Result<Vec<_>>>()?;
    let actions: Vec<JointAction> = batch.iter().map(|t| t.action.clone()).collect();
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    gradient_from_traces(params, pools, &traces, &actions, &rewards, coeffs)
}

/// Total loss with the actor's advantages pinned to `advantages` (the
/// detached quantity). With `None`, advantages use the current values.
pub fn total_loss(
    params: &AgentParams,
    pools: &PoolSet,
    batch: &[Transition<'_>],
    coeffs: LossCoefficients,
    advantages: Option<&[f64]>,
) -> Result<f64> {
    let n = batch.len() as f64;
    let mut actor = 0.0;
    let mut critic = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let trace = forward(params, &t.probe.frames)?;
        let out = outcome(&trace, pools, &t.action, t.reward);
        let adv = advantages.map_or(out.reward - out.value, |a| a[i]);
        actor += -adv * out.log_prob - coeffs.entropy_coeff * out.entropy;
        critic += (out.reward - out.value).powi(2);
    }
    Ok(actor / n + coeffs.critic_weight * critic / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COEFFS: LossCoefficients = LossCoefficients {
        entropy_coeff: 0.01,
        critic_weight: 0.5,
    };

    fn o(reward: f64, value: f64, log_prob: f64, entropy: f64) -> SampleOutcome {
        SampleOutcome {
            reward,
            value,
            log_prob,
            entropy,
        }
    }

    #[test]
    fn zero_advantage_zero_actor() {
        let no_beta = LossCoefficients {
            entropy_coeff: 0.0,
            ..COEFFS
        };
        for lp in [-0.1, -3.0, -12.0] {
            assert_eq!(losses(&[o(0.4, 0.4, lp, 1.0)], no_beta).actor, 0.0);
        }
    }

    #[test]
    fn critic_squared_error() {
        let l = losses(&[o(1.0, 0.0, -1.0, 0.0)], COEFFS);
        assert_eq!(l.critic, 1.0);
        assert_eq!(l.total, l.actor + 0.5);
    }

    #[test]
    fn entropy_bonus_only() {
        let l = losses(&[o(0.5, 0.5, -0.7, 1.09861)], COEFFS);
        assert!((l.actor + 0.010_986_1).abs() < 1e-15);
    }
}
