//! Per-modality categorical policies: sequential masked sampling, greedy
//! top-k, joint log-probability and the entropy of the draw sequence.

use rand::Rng;

use super::network::softmax;
use crate::error::{Error, Result};
use crate::pool::{JointAction, PoolSet};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadDistribution {
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl HeadDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        Self { logits, probs }
    }

    /// Builds a head from explicit probabilities; zeros become `-inf` logits.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::DegenerateDistribution(format!(
                "not a probability vector: {probs:?}"
            )));
        }
        Ok(Self::from_logits(probs.iter().map(|p| p.ln()).collect()))
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Renormalized probabilities with `excluded` masked out.
    pub fn masked_probs(&self, excluded: &[usize]) -> Result<Vec<f64>> {
        let mut avail = vec![true; self.len()];
        for &i in excluded {
            avail[i] = false;
        }
        let logp = masked_log_softmax(&self.logits, &avail)?;
        Ok(logp.iter().map(|l| l.exp()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDistribution {
    pub heads: Vec<HeadDistribution>,
}

impl SelectionDistribution {
    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        Self {
            heads: logits
                .into_iter()
                .map(HeadDistribution::from_logits)
                .collect(),
        }
    }

    pub fn from_probs(probs: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            heads: probs
                .iter()
                .map(|p| HeadDistribution::from_probs(p))
                .collect::<Result<_>>()?,
        })
    }

    pub(crate) fn check(&self, pools: &PoolSet) -> Result<()> {
        if self.heads.len() != pools.len() {
            return Err(Error::Shape(format!(
                "{} heads for {} pools",
                self.heads.len(),
                pools.len()
            )));
        }
        for (h, p) in self.heads.iter().zip(pools.pools()) {
            if h.len() != p.len() {
                return Err(Error::Shape(format!(
                    "head `{}` has {} outputs, pool has {} models",
                    p.modality,
                    h.len(),
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

/// A sampled or greedy joint action. Within a modality the indices are in
/// draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    pub action: JointAction,
    /// Joint log-probability under the sequential factorization.
    pub log_prob: f64,
    /// Entropy of the joint draw distribution.
    pub entropy: f64,
}

/// Log-softmax restricted to `avail`; masked entries are `-inf`.
pub(crate) fn masked_log_softmax(logits: &[f64], avail: &[bool]) -> Result<Vec<f64>> {
    let max = logits
        .iter()
        .zip(avail)
        .filter(|(_, &a)| a)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution(
            "no probability mass left after masking".into(),
        ));
    }
    let lse = max
        + logits
            .iter()
            .zip(avail)
            .filter(|(_, &a)| a)
            .map(|(&z, _)| (z - max).exp())
            .sum::<f64>()
            .ln();
    Ok(logits
        .iter()
        .zip(avail)
        .map(|(&z, &a)| if a { z - lse } else { f64::NEG_INFINITY })
        .collect())
}

/// log P(order) for sequential draws without replacement, plus its gradient
/// with respect to the logits: sum over steps of (onehot(a_i) - q_i), with
/// `q_i` the masked softmax at step i.
pub(crate) fn sequence_log_prob(logits: &[f64], order: &[usize]) -> (f64, Vec<f64>) {
    let mut avail = vec![true; logits.len()];
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for &a in order {
        match masked_log_softmax(logits, &avail) {
            Ok(logp) => {
                total += logp[a];
                for (g, l) in grad.iter_mut().zip(&logp) {
                    *g -= l.exp();
                }
                grad[a] += 1.0;
            }
            Err(_) => return (f64::NEG_INFINITY, grad),
        }
        avail[a] = false;
    }
    (total, grad)
}

/// Entropy of `k` sequential draws without replacement and its gradient with
/// respect to the logits, by exact recursion over first draws.
pub(crate) fn sequential_entropy(logits: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; logits.len()];
    let mut avail = vec![true; logits.len()];
    let h = entropy_rec(logits, &mut avail, k, &mut grad);
    (h, grad)
}

fn entropy_rec(logits: &[f64], avail: &mut [bool], k: usize, grad: &mut [f64]) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let Ok(logp) = masked_log_softmax(logits, avail) else {
        return 0.0;
    };
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let h_step: f64 = -p
        .iter()
        .zip(&logp)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(pi, li)| pi * li)
        .sum::<f64>();
    for j in 0..logits.len() {
        if p[j] > 0.0 {
            grad[j] -= p[j] * (logp[j] + h_step);
        }
    }
    if k == 1 {
        return h_step;
    }
    let n = logits.len();
    let mut sub_h = vec![0.0; n];
    let mut sub_g = vec![vec![0.0; n]; n];
    for i in 0..n {
        if p[i] > 0.0 {
            avail[i] = false;
            sub_h[i] = entropy_rec(logits, avail, k - 1, &mut sub_g[i]);
            avail[i] = true;
        }
    }
    let mean_sub: f64 = p.iter().zip(&sub_h).map(|(a, b)| a * b).sum();
    for j in 0..n {
        grad[j] += p[j] * (sub_h[j] - mean_sub);
        for i in 0..n {
            if p[i] > 0.0 {
                grad[j] += p[i] * sub_g[i][j];
            }
        }
    }
    h_step + mean_sub
}

/// Sum over modalities of the sequential-draw entropy.
pub fn joint_entropy(dist: &SelectionDistribution, pools: &PoolSet) -> f64 {
    dist.heads
        .iter()
        .zip(pools.pools())
        .map(|(h, p)| sequential_entropy(&h.logits, p.select_k).0)
        .sum()
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Per modality, `select_k` sequential categorical draws; each drawn index is
/// masked and the remainder renormalized before the next draw.
pub fn sample_action(
    dist: &SelectionDistribution,
    pools: &PoolSet,
    rng: &mut impl Rng,
) -> Result<ActionSet> {
    dist.check(pools)?;
    let mut per_modality = Vec::with_capacity(pools.len());
    let mut log_prob = 0.0;
    for (head, pool) in dist.heads.iter().zip(pools.pools()) {
        let mut avail = vec![true; head.len()];
        let mut order = Vec::with_capacity(pool.select_k);
        for _ in 0..pool.select_k {
            let logp = masked_log_softmax(&head.logits, &avail)?;
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let pick = draw(&probs, rng);
            log_prob += logp[pick];
            avail[pick] = false;
            order.push(pick);
        }
        per_modality.push(order);
    }
    Ok(ActionSet {
        action: JointAction(per_modality),
        log_prob,
        entropy: joint_entropy(dist, pools),
    })
}

/// Per modality, the `select_k` most probable indices in descending order;
/// ties go to the lowest index.
pub fn greedy_action(dist: &SelectionDistribution, pools: &PoolSet) -> ActionSet {
    let mut per_modality = Vec::with_capacity(pools.len());
    let mut log_prob = 0.0;
    for (head, pool) in dist.heads.iter().zip(pools.pools()) {
        let mut idx: Vec<usize> = (0..head.len()).collect();
        idx.sort_by(|&a, &b| head.logits[b].total_cmp(&head.logits[a]).then(a.cmp(&b)));
        idx.truncate(pool.select_k);
        log_prob += sequence_log_prob(&head.logits, &idx).0;
        per_modality.push(idx);
    }
    ActionSet {
        action: JointAction(per_modality),
        log_prob,
        entropy: joint_entropy(dist, pools),
    }
}
