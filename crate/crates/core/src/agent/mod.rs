//! The selection agent: frame encoder, additive attention pooling,
//! per-modality policy heads and a value head.
//!
//! The agent only ever looks at the probe sequence. Whatever it selects is
//! applied to both probe and gallery by the caller.

mod network;
mod params;
mod policy;

pub use params::{AgentConfig, AgentDims, AgentParams, Block, Checkpoint, HeadDims, Layout};
pub use policy::{
    greedy_action, joint_entropy, sample_action, ActionSet, HeadDistribution, SelectionDistribution,
};

pub(crate) use network::{backward, forward, ForwardTrace};
pub(crate) use policy::{sequence_log_prob, sequential_entropy};

use crate::error::Result;
use crate::pool::PoolSet;
use crate::simworld::SequenceSample;

/// Video-level representation and the attention weights that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRepresentation {
    pub h: Vec<f64>,
    pub attention_weights: Vec<f64>,
}

/// Frame descriptors to per-frame features.
pub fn encode_frames(sample: &SequenceSample, params: &AgentParams) -> Result<Vec<Vec<f64>>> {
    Ok(network::encode(params, &sample.frames)?
        .into_iter()
        .map(|t| t.output().to_vec())
        .collect())
}

/// `e_t = v . tanh(W_a f_t)`, `alpha = softmax(e)`, `h = W_p sum_t alpha_t f_t + b_p`.
pub fn attention_pool(features: &[Vec<f64>], params: &AgentParams) -> Result<PooledRepresentation> {
    let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let tr = network::pool(params, &refs)?;
    Ok(PooledRepresentation {
        h: tr.h,
        attention_weights: tr.alpha,
    })
}

/// Softmax policy per modality and the scalar value estimate.
pub fn policy_forward(
    pooled: &PooledRepresentation,
    params: &AgentParams,
    pools: &PoolSet,
) -> Result<(SelectionDistribution, f64)> {
    params.dims.check_pools(pools)?;
    if pooled.h.len() != params.dims.pooled_dim {
        return Err(crate::Error::Shape(format!(
            "pooled vector has width {}, agent expects {}",
            pooled.h.len(),
            params.dims.pooled_dim
        )));
    }
    let topo = &params.layout.topology;
    let logits = topo
        .heads
        .iter()
        .map(|m| network::mlp_forward(params, m, &pooled.h).output().to_vec())
        .collect();
    let value = network::mlp_forward(params, &topo.value, &pooled.h).output()[0];
    Ok((SelectionDistribution::from_logits(logits), value))
}

/// Full forward pass on one probe sequence.
pub fn act(
    sample: &SequenceSample,
    params: &AgentParams,
    pools: &PoolSet,
) -> Result<(SelectionDistribution, f64)> {
    params.dims.check_pools(pools)?;
    let tr = forward(params, &sample.frames)?;
    Ok((SelectionDistribution::from_logits(tr.logits()), tr.value()))
}
