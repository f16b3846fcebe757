//! Gallery/probe protocol, policy and fixed-combo evaluation, GFLOPs
//! accounting and selection histograms.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_average_precision, rank1, ScoreMatrix};
use crate::agent::{act, greedy_action, AgentParams};
use crate::error::{Error, Result};
use crate::pool::{JointAction, Modality, PoolSet};
use crate::simworld::{make_pairs, PairSample, SequenceSample, SimilaritySource, World};
use crate::training::{fused_similarity, reward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Pairs used for reward-based comparisons (oracle, policy reward).
    pub reward_pairs: usize,
    pub positive_fraction: f64,
    pub pair_seed: u64,
    /// Multiplier used when scoring rewards outside training.
    pub lambda: f64,
    /// Largest joint action space the brute-force oracle will enumerate.
    pub combination_cap: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            reward_pairs: 400,
            positive_fraction: 0.5,
            pair_seed: 7,
            lambda: 0.1,
            combination_cap: 10_000,
        }
    }
}

impl ProtocolConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn pairs<'w>(&self, world: &'w World) -> Result<Vec<PairSample<'w>>> {
        make_pairs(
            world,
            self.reward_pairs,
            self.positive_fraction,
            self.pair_seed,
        )
    }
}

/// One gallery sample per identity (smallest sample id); the rest are probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<'w> {
    pub gallery: Vec<&'w SequenceSample>,
    pub probes: Vec<&'w SequenceSample>,
}

impl<'w> Split<'w> {
    pub fn new(world: &'w World) -> Split<'w> {
        let mut first: BTreeMap<usize, &'w SequenceSample> = BTreeMap::new();
        for s in &world.samples {
            first
                .entry(s.identity)
                .and_modify(|cur| {
                    if s.sample_id < cur.sample_id {
                        *cur = s;
                    }
                })
                .or_insert(s);
        }
        let gallery: Vec<_> = first.values().copied().collect();
        let probes = world
            .samples
            .iter()
            .filter(|s| first[&s.identity].sample_id != s.sample_id)
            .collect();
        Split { gallery, probes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboFrequency {
    pub combo: String,
    pub action: JointAction,
    pub count: usize,
    pub frequency: f64,
    pub gflops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rank1: f64,
    pub map: f64,
    pub avg_gflops: f64,
    pub mean_normalized_cost: f64,
    pub probes: usize,
    pub gallery: usize,
    pub modalities: Vec<Modality>,
    /// Sorted by combo id.
    pub selection_histogram: Vec<ComboFrequency>,
    /// Average GFLOPs spent per modality.
    pub modality_gflops: BTreeMap<Modality, f64>,
}

impl EvalReport {
    /// `sum(frequency * combo gflops)`; equals `avg_gflops` up to rounding.
    pub fn histogram_gflops(&self) -> f64 {
        self.selection_histogram
            .iter()
            .map(|c| c.frequency * c.gflops)
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_histogram_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "combo,count,frequency,gflops")?;
        for c in &self.selection_histogram {
            writeln!(out, "{},{},{},{}", c.combo, c.count, c.frequency, c.gflops)?;
        }
        Ok(())
    }
}

fn canonical(action: &JointAction) -> JointAction {
    JointAction(
        action
            .per_modality()
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.sort_unstable();
                s
            })
            .collect(),
    )
}

/// Shared path for every evaluation: one action per probe, the selected
/// models score that probe against every gallery entry.
fn evaluate_actions<S: SimilaritySource>(
    source: &S,
    pools: &PoolSet,
    split: &Split<'_>,
    actions: &[JointAction],
) -> Result<(EvalReport, ScoreMatrix)> {
    let rows: Vec<Vec<f64>> = split
        .probes
        .par_iter()
        .zip(actions.par_iter())
        .map(|(probe, action)| {
            split
                .gallery
                .iter()
                .map(|g| fused_similarity(source, pools, action, &PairSample::new(probe, g)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let matrix = ScoreMatrix::new(
        rows,
        split.probes.iter().map(|s| s.identity).collect(),
        split.gallery.iter().map(|s| s.identity).collect(),
    )?;

    let n = actions.len();
    let mut counts: BTreeMap<String, (JointAction, usize)> = BTreeMap::new();
    let mut gflops_total = 0.0;
    let mut cost_total = 0.0;
    let mut per_modality = vec![0.0; pools.len()];
    for a in actions {
        let by = pools.gflops_by_modality(a)?;
        gflops_total += by.iter().sum::<f64>();
        per_modality.iter_mut().zip(&by).for_each(|(t, g)| *t += g);
        cost_total += pools.normalized_cost(a)?;
        let entry = counts
            .entry(pools.combo_id(a))
            .or_insert_with(|| (canonical(a), 0));
        entry.1 += 1;
    }
    let denom = n.max(1) as f64;
    let selection_histogram = counts
        .into_iter()
        .map(|(combo, (action, count))| {
            let gflops = pools.total_gflops(&action)?;
            Ok(ComboFrequency {
                combo,
                action,
                count,
                frequency: count as f64 / denom,
                gflops,
            })
        })
        .collect::<Result<_>>()?;

    let report = EvalReport {
        rank1: rank1(&matrix)?,
        map: mean_average_precision(&matrix)?,
        avg_gflops: gflops_total / denom,
        mean_normalized_cost: cost_total / denom,
        probes: n,
        gallery: split.gallery.len(),
        modalities: pools.modalities(),
        selection_histogram,
        modality_gflops: pools
            .modalities()
            .into_iter()
            .zip(per_modality.iter().map(|t| t / denom))
            .collect(),
    };
    Ok((report, matrix))
}

/// Greedy action per probe, computed from the probe alone.
pub fn greedy_actions(
    probes: &[&SequenceSample],
    pools: &PoolSet,
    params: &AgentParams,
) -> Result<Vec<JointAction>> {
    params.dims.check_pools(pools)?;
    probes
        .par_iter()
        .map(|p| {
            let (dist, _) = act(p, params, pools)?;
            Ok(greedy_action(&dist, pools).action)
        })
        .collect()
}

fn project(action: &JointAction, positions: &[usize]) -> JointAction {
    JointAction(positions.iter().map(|&i| action.0[i].clone()).collect())
}

/// Policy evaluation restricted to `subset` (fusion averages only over the
/// active modalities). The agent still sees the full probe.
pub fn evaluate_policy_subset_with<S: SimilaritySource>(
    source: &S,
    world: &World,
    pools: &PoolSet,
    params: &AgentParams,
    subset: &[Modality],
) -> Result<(EvalReport, ScoreMatrix)> {
    world.check_pools(pools)?;
    let restricted = pools.restrict(subset)?;
    let positions: Vec<usize> = restricted
        .modalities()
        .iter()
        .map(|m| pools.position(m).expect("restrict keeps known modalities"))
        .collect();
    let split = Split::new(world);
    let actions: Vec<JointAction> = greedy_actions(&split.probes, pools, params)?
        .iter()
        .map(|a| project(a, &positions))
        .collect();
    evaluate_actions(source, &restricted, &split, &actions)
}

pub fn evaluate_policy_with<S: SimilaritySource>(
    source: &S,
    world: &World,
    pools: &PoolSet,
    params: &AgentParams,
) -> Result<(EvalReport, ScoreMatrix)> {
    evaluate_policy_subset_with(source, world, pools, params, &pools.modalities())
}

pub fn evaluate_policy(world: &World, pools: &PoolSet, params: &AgentParams) -> Result<EvalReport> {
    Ok(evaluate_policy_with(world, world, pools, params)?.0)
}

pub fn evaluate_fixed_combo_with<S: SimilaritySource>(
    source: &S,
    world: &World,
    pools: &PoolSet,
    combo: &JointAction,
) -> Result<(EvalReport, ScoreMatrix)> {
    world.check_pools(pools)?;
    pools.check_action(combo)?;
    let split = Split::new(world);
    let actions = vec![combo.clone(); split.probes.len()];
    evaluate_actions(source, pools, &split, &actions)
}

pub fn evaluate_fixed_combo(
    world: &World,
    pools: &PoolSet,
    combo: &JointAction,
) -> Result<EvalReport> {
    Ok(evaluate_fixed_combo_with(world, world, pools, combo)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub modalities: Vec<Modality>,
    pub report: EvalReport,
}

pub fn modality_ablation(
    world: &World,
    pools: &PoolSet,
    params: &AgentParams,
    subsets: &[Vec<Modality>],
) -> Result<Vec<AblationRow>> {
    subsets
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::Config("ablation subset is empty".into()));
            }
            let (report, _) = evaluate_policy_subset_with(world, world, pools, params, s)?;
            Ok(AblationRow {
                modalities: report.modalities.clone(),
                report,
            })
        })
        .collect()
}

/// Mean reward of the greedy policy over `pairs` at multiplier `lambda`.
pub fn policy_mean_reward<S: SimilaritySource>(
    source: &S,
    pools: &PoolSet,
    params: &AgentParams,
    pairs: &[PairSample<'_>],
    lambda: f64,
) -> Result<f64> {
    let probes: Vec<&SequenceSample> = pairs.iter().map(|p| p.probe).collect();
    let actions = greedy_actions(&probes, pools, params)?;
    mean_reward(source, pools, pairs, &actions, lambda)
}

pub fn mean_reward<S: SimilaritySource>(
    source: &S,
    pools: &PoolSet,
    pairs: &[PairSample<'_>],
    actions: &[JointAction],
    lambda: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to score".into()));
    }
    let mut total = 0.0;
    for (pair, a) in pairs.iter().zip(actions) {
        let s = fused_similarity(source, pools, a, pair)?;
        total += reward(s, pair.matched, lambda, pools.normalized_cost(a)?);
    }
    Ok(total / pairs.len() as f64)
}
