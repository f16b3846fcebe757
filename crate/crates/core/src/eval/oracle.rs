//! Exhaustive search over joint actions, used as an independent optimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::protocol::ProtocolConfig;
use crate::error::{Error, Result};
use crate::pool::{JointAction, PoolSet};
use crate::simworld::{PairSample, SimilaritySource, World};
use crate::training::{fuse_scores, reward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Reward-maximizing action per input pair (ties to the first enumerated).
    pub per_input_actions: Vec<JointAction>,
    pub per_input_rewards: Vec<f64>,
    pub per_input_mean: f64,
    pub best_constant: JointAction,
    pub best_constant_mean: f64,
    /// Mean reward of every joint action, in enumeration order.
    pub constant_means: Vec<(JointAction, f64)>,
    pub combinations: u64,
}

/// Every model's score on one pair, queried once and reused by all actions.
fn score_table<S: SimilaritySource>(
    source: &S,
    pools: &PoolSet,
    pair: &PairSample<'_>,
) -> Result<Vec<Vec<f64>>> {
    pools
        .pools()
        .iter()
        .map(|pool| {
            pool.models
                .iter()
                .map(|m| source.similarity(m, pair))
                .collect()
        })
        .collect()
}

fn fused_from_table(table: &[Vec<f64>], action: &JointAction) -> Result<f64> {
    let per_modality: Vec<f64> = table
        .iter()
        .zip(action.per_modality())
        .map(|(scores, sel)| sel.iter().map(|&i| scores[i]).sum::<f64>() / sel.len() as f64)
        .collect();
    fuse_scores(&per_modality)
}

pub fn brute_force_oracle_on<S: SimilaritySource>(
    source: &S,
    pools: &PoolSet,
    pairs: &[PairSample<'_>],
    lambda: f64,
    cap: u64,
) -> Result<OracleResult> {
    let combinations = pools.combination_count();
    if combinations > cap {
        return Err(Error::CapExceeded {
            count: combinations,
            cap,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Config("oracle needs at least one pair".into()));
    }
    let actions = pools.joint_actions();
    let costs = actions
        .iter()
        .map(|a| pools.normalized_cost(a))
        .collect::<Result<Vec<f64>>>()?;

    // rewards[pair][action]
    let rewards: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|pair| {
            let table = score_table(source, pools, pair)?;
            actions
                .iter()
                .zip(&costs)
                .map(|(a, &c)| {
                    Ok(reward(
                        fused_from_table(&table, a)?,
                        pair.matched,
                        lambda,
                        c,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = pairs.len() as f64;
    let mut per_input_actions = Vec::with_capacity(pairs.len());
    let mut per_input_rewards = Vec::with_capacity(pairs.len());
    for row in &rewards {
        let mut best = 0;
        for (j, &r) in row.iter().enumerate() {
            if r > row[best] {
                best = j;
            }
        }
        per_input_actions.push(actions[best].clone());
        per_input_rewards.push(row[best]);
    }
    let constant_means: Vec<(JointAction, f64)> = actions
        .iter()
        .enumerate()
        .map(|(j, a)| (a.clone(), rewards.iter().map(|row| row[j]).sum::<f64>() / n))
        .collect();
    let mut best = 0;
    for (j, (_, m)) in constant_means.iter().enumerate() {
        if *m > constant_means[best].1 {
            best = j;
        }
    }
    Ok(OracleResult {
        per_input_mean: per_input_rewards.iter().sum::<f64>() / n,
        per_input_actions,
        per_input_rewards,
        best_constant: constant_means[best].0.clone(),
        best_constant_mean: constant_means[best].1,
        constant_means,
        combinations,
    })
}

/// Oracle over the protocol's reward pairs.
pub fn brute_force_oracle(
    world: &World,
    pools: &PoolSet,
    lambda: f64,
    protocol: &ProtocolConfig,
) -> Result<OracleResult> {
    world.check_pools(pools)?;
    let combinations = pools.combination_count();
    if combinations > protocol.combination_cap {
        return Err(Error::CapExceeded {
            count: combinations,
            cap: protocol.combination_cap,
        });
    }
    let pairs = protocol.pairs(world)?;
    brute_force_oracle_on(world, pools, &pairs, lambda, protocol.combination_cap)
}
