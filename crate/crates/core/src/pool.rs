//! Model pools per modality and the additive FLOP cost model.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A biometric cue stream. `face`, `gait` and `body` are the usual ones but
/// any name is accepted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Modality(String);

impl Modality {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn face() -> Self {
        Self::new("face")
    }

    pub fn gait() -> Self {
        Self::new("gait")
    }

    pub fn body() -> Self {
        Self::new("body")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Modality {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// One frozen model in a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    #[serde(skip)]
    pub modality: Modality,
    /// GFLOPs per sequence forward pass.
    pub cost_gflops: f64,
    /// Synthetic recognition power in (0, 1].
    pub discriminability: f64,
    /// Embedding width; metadata only.
    pub embed_dim: usize,
}

impl Default for Modality {
    fn default() -> Self {
        Self::new("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPool {
    #[serde(rename = "name")]
    pub modality: Modality,
    pub select_k: usize,
    pub models: Vec<ModelSpec>,
}

impl ModalityPool {
    pub fn new(modality: Modality, select_k: usize, models: Vec<ModelSpec>) -> Self {
        let mut pool = Self {
            modality,
            select_k,
            models,
        };
        pool.stamp_modality();
        pool
    }

    fn stamp_modality(&mut self) {
        for m in &mut self.models {
            m.modality = self.modality.clone();
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Sum of the `select_k` largest costs; the normalizer for this modality.
    pub fn max_selection_cost(&self) -> f64 {
        let mut costs: Vec<f64> = self.models.iter().map(|m| m.cost_gflops).collect();
        costs.sort_by(|a, b| b.total_cmp(a));
        costs.iter().take(self.select_k).sum()
    }

    /// Indices of the `select_k` cheapest models (ties to the lower index).
    pub fn cheapest(&self) -> Vec<usize> {
        self.ranked_by_cost(false)
    }

    /// Indices of the `select_k` most expensive models (ties to the lower index).
    pub fn most_expensive(&self) -> Vec<usize> {
        self.ranked_by_cost(true)
    }

    fn ranked_by_cost(&self, descending: bool) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.models.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ca, cb) = (self.models[a].cost_gflops, self.models[b].cost_gflops);
            let ord = if descending {
                cb.total_cmp(&ca)
            } else {
                ca.total_cmp(&cb)
            };
            ord.then(a.cmp(&b))
        });
        idx.truncate(self.select_k);
        idx.sort_unstable();
        idx
    }

    /// All unordered `select_k`-subsets of model indices, lexicographic.
    pub fn selections(&self) -> Vec<Vec<usize>> {
        combinations(self.models.len(), self.select_k)
    }

    fn check_selection(&self, sel: &[usize]) -> Result<()> {
        if sel.len() != self.select_k {
            return Err(Error::InvalidAction(format!(
                "modality {} expects {} indices, got {}",
                self.modality,
                self.select_k,
                sel.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &i in sel {
            if i >= self.models.len() {
                return Err(Error::InvalidAction(format!(
                    "index {i} out of range for modality {} ({} models)",
                    self.modality,
                    self.models.len()
                )));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidAction(format!(
                    "duplicate index {i} for modality {}",
                    self.modality
                )));
            }
        }
        Ok(())
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Selected model indices per modality, aligned with [`PoolSet`] order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointAction(pub Vec<Vec<usize>>);

impl JointAction {
    pub fn per_modality(&self) -> &[Vec<usize>] {
        &self.0
    }
}

/// Returns every invariant violation of a candidate pool list.
pub fn validate_poolset(pools: &[ModalityPool]) -> Vec<String> {
    let mut errors = Vec::new();
    if pools.is_empty() {
        errors.push("pool set has no modalities".to_string());
    }
    let mut modalities = BTreeSet::new();
    for pool in pools {
        let name = &pool.modality;
        if !modalities.insert(name.clone()) {
            errors.push(format!("duplicate modality {name}"));
        }
        if pool.models.is_empty() {
            errors.push(format!("modality {name}: pool has no models"));
        }
        if pool.select_k == 0 {
            errors.push(format!("modality {name}: select_k must be positive"));
        }
        if pool.select_k > pool.models.len() {
            errors.push(format!(
                "modality {name}: select_k exceeds pool size ({} > {})",
                pool.select_k,
                pool.models.len()
            ));
        }
        let mut ids = BTreeSet::new();
        for m in &pool.models {
            if !ids.insert(m.id.as_str()) {
                errors.push(format!("modality {name}: duplicate id {}", m.id));
            }
            if !(m.cost_gflops.is_finite() && m.cost_gflops > 0.0) {
                errors.push(format!(
                    "modality {name}: model {} cost_gflops must be positive",
                    m.id
                ));
            }
            if !(m.discriminability > 0.0 && m.discriminability <= 1.0) {
                errors.push(format!(
                    "modality {name}: model {} discriminability must lie in (0, 1]",
                    m.id
                ));
            }
            if m.embed_dim == 0 {
                errors.push(format!(
                    "modality {name}: model {} embed_dim must be positive",
                    m.id
                ));
            }
        }
    }
    errors
}

/// The active modality pools. Order is the canonical index space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModalityPool>", into = "Vec<ModalityPool>")]
pub struct PoolSet {
    pools: Vec<ModalityPool>,
}

impl TryFrom<Vec<ModalityPool>> for PoolSet {
    type Error = Error;

    fn try_from(pools: Vec<ModalityPool>) -> Result<Self> {
        Self::new(pools)
    }
}

impl From<PoolSet> for Vec<ModalityPool> {
    fn from(p: PoolSet) -> Self {
        p.pools
    }
}

impl PoolSet {
    pub fn new(mut pools: Vec<ModalityPool>) -> Result<Self> {
        let errors = validate_poolset(&pools);
        if !errors.is_empty() {
            return Err(Error::InvalidPools(errors));
        }
        for p in &mut pools {
            p.stamp_modality();
        }
        Ok(Self { pools })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn pools(&self) -> &[ModalityPool] {
        &self.pools
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.pools.iter().map(|p| p.modality.clone()).collect()
    }

    pub fn position(&self, modality: &Modality) -> Option<usize> {
        self.pools.iter().position(|p| &p.modality == modality)
    }

    /// Sub-pool set over `subset`, kept in canonical order.
    pub fn restrict(&self, subset: &[Modality]) -> Result<PoolSet> {
        if subset.is_empty() {
            return Err(Error::Config("modality subset is empty".into()));
        }
        for m in subset {
            if self.position(m).is_none() {
                return Err(Error::Config(format!("unknown modality {m} in subset")));
            }
        }
        let pools = self
            .pools
            .iter()
            .filter(|p| subset.contains(&p.modality))
            .cloned()
            .collect();
        PoolSet::new(pools)
    }

    pub fn check_action(&self, action: &JointAction) -> Result<()> {
        if action.0.len() != self.pools.len() {
            return Err(Error::InvalidAction(format!(
                "action covers {} modalities, pool set has {}",
                action.0.len(),
                self.pools.len()
            )));
        }
        for (pool, sel) in self.pools.iter().zip(&action.0) {
            pool.check_selection(sel)?;
        }
        Ok(())
    }

    /// Mean over modalities of selected cost divided by the `select_k`
    /// largest costs of that pool. In [0, 1].
    pub fn normalized_cost(&self, action: &JointAction) -> Result<f64> {
        self.check_action(action)?;
        let total: f64 = self
            .pools
            .iter()
            .zip(&action.0)
            .map(|(pool, sel)| {
                let chosen: f64 = sel.iter().map(|&i| pool.models[i].cost_gflops).sum();
                chosen / pool.max_selection_cost()
            })
            .sum();
        Ok(total / self.pools.len() as f64)
    }

    /// Sum of GFLOPs over every selected model.
    pub fn total_gflops(&self, action: &JointAction) -> Result<f64> {
        Ok(self.gflops_by_modality(action)?.iter().sum())
    }

    pub fn gflops_by_modality(&self, action: &JointAction) -> Result<Vec<f64>> {
        self.check_action(action)?;
        Ok(self
            .pools
            .iter()
            .zip(&action.0)
            .map(|(pool, sel)| sel.iter().map(|&i| pool.models[i].cost_gflops).sum())
            .collect())
    }

    /// Human-readable combo key, e.g. `face:a101+gait:gaitset+body:ap3d34,cal`.
    /// Indices within a modality are listed in ascending order.
    pub fn combo_id(&self, action: &JointAction) -> String {
        self.pools
            .iter()
            .zip(&action.0)
            .map(|(pool, sel)| {
                let mut sorted = sel.clone();
                sorted.sort_unstable();
                let ids: Vec<&str> = sorted
                    .iter()
                    .map(|&i| pool.models.get(i).map_or("?", |m| m.id.as_str()))
                    .collect();
                format!("{}:{}", pool.modality, ids.join(","))
            })
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Number of distinct joint actions (unordered within a modality).
    pub fn combination_count(&self) -> u64 {
        self.pools
            .iter()
            .map(|p| binomial(p.models.len() as u64, p.select_k as u64))
            .product()
    }

    /// Every joint action, with within-modality indices ascending.
    pub fn joint_actions(&self) -> Vec<JointAction> {
        let mut out = vec![Vec::new()];
        for pool in &self.pools {
            let sels = pool.selections();
            let mut next = Vec::with_capacity(out.len() * sels.len());
            for prefix in &out {
                for s in &sels {
                    let mut a: Vec<Vec<usize>> = prefix.clone();
                    a.push(s.clone());
                    next.push(a);
                }
            }
            out = next;
        }
        out.into_iter().map(JointAction).collect()
    }

    /// The cheapest selection in every modality.
    pub fn min_combo(&self) -> JointAction {
        JointAction(self.pools.iter().map(|p| p.cheapest()).collect())
    }

    /// The most expensive selection in every modality.
    pub fn max_combo(&self) -> JointAction {
        JointAction(self.pools.iter().map(|p| p.most_expensive()).collect())
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}
