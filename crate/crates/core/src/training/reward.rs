//! Score fusion and the per-pair reward.

use crate::error::{Error, Result};
use crate::pool::{JointAction, PoolSet};
use crate::simworld::{PairSample, SimilaritySource};

/// Plain average of per-modality scores.
pub fn fuse_scores(modality_scores: &[f64]) -> Result<f64> {
    if modality_scores.is_empty() {
        return Err(Error::Config("cannot fuse an empty score set".into()));
    }
    Ok(modality_scores.iter().sum::<f64>() / modality_scores.len() as f64)
}

/// Queries the selected models (same model on probe and gallery) and returns
/// one score per modality; multi-model selections are averaged first.
pub fn modality_scores<S: SimilaritySource + ?Sized>(
    source: &S,
    pools: &PoolSet,
    action: &JointAction,
    pair: &PairSample<'_>,
) -> Result<Vec<f64>> {
    pools.check_action(action)?;
    pools
        .pools()
        .iter()
        .zip(action.per_modality())
        .map(|(pool, sel)| {
            let mut sum = 0.0;
            for &i in sel {
                sum += source.similarity(&pool.models[i], pair)?;
            }
            Ok(sum / sel.len() as f64)
        })
        .collect()
}

pub fn fused_similarity<S: SimilaritySource + ?Sized>(
    source: &S,
    pools: &PoolSet,
    action: &JointAction,
    pair: &PairSample<'_>,
) -> Result<f64> {
    fuse_scores(&modality_scores(source, pools, action, pair)?)
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `matched`.
pub fn bce_with_logit(logit: f64, matched: bool) -> f64 {
    if matched {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// `1 - BCE(sigmoid(s_final), y) - lambda * cost`.
pub fn reward(s_final: f64, matched: bool, lambda: f64, cost: f64) -> f64 {
    1.0 - bce_with_logit(s_final, matched) - lambda * cost
}
