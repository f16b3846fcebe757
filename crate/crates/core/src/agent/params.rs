//! Flat parameter storage with a named block layout.
//!
//! Every trainable tensor lives in one `Vec<f64>`. The layout fixes the
//! flattening order: encoder layers, attention, projection, one head per
//! modality in pool order, then the value head. Weights are row-major
//! `[out, in]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Modality, PoolSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub feature_dim: usize,
    pub attention_dim: usize,
    pub pooled_dim: usize,
    pub head_hidden: Vec<usize>,
    pub value_hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            attention_dim: 32,
            pooled_dim: 32,
            head_hidden: vec![32, 16],
            value_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDims {
    pub modality: Modality,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDims {
    pub descriptor_dim: usize,
    pub feature_dim: usize,
    pub attention_dim: usize,
    pub pooled_dim: usize,
    pub head_hidden: Vec<usize>,
    pub value_hidden: usize,
    pub heads: Vec<HeadDims>,
}

impl AgentDims {
    pub fn new(descriptor_dim: usize, config: &AgentConfig, pools: &PoolSet) -> Result<Self> {
        let dims = Self {
            descriptor_dim,
            feature_dim: config.feature_dim,
            attention_dim: config.attention_dim,
            pooled_dim: config.pooled_dim,
            head_hidden: config.head_hidden.clone(),
            value_hidden: config.value_hidden,
            heads: pools
                .pools()
                .iter()
                .map(|p| HeadDims {
                    modality: p.modality.clone(),
                    outputs: p.len(),
                })
                .collect(),
        };
        dims.validate()?;
        Ok(dims)
    }

    fn validate(&self) -> Result<()> {
        let widths = [
            self.descriptor_dim,
            self.feature_dim,
            self.attention_dim,
            self.pooled_dim,
            self.value_hidden,
        ];
        if widths.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Shape(format!(
                "agent widths must be positive: {self:?}"
            )));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.outputs == 0) {
            return Err(Error::Shape(
                "agent needs at least one non-empty head".into(),
            ));
        }
        Ok(())
    }

    /// Heads must line up with the pool set, modality by modality.
    pub fn check_pools(&self, pools: &PoolSet) -> Result<()> {
        if self.heads.len() != pools.len() {
            return Err(Error::Shape(format!(
                "agent has {} heads, pool set has {} modalities",
                self.heads.len(),
                pools.len()
            )));
        }
        for (head, pool) in self.heads.iter().zip(pools.pools()) {
            if head.modality != pool.modality || head.outputs != pool.len() {
                return Err(Error::Shape(format!(
                    "head `{}` has {} outputs but pool `{}` has {} models",
                    head.modality,
                    head.outputs,
                    pool.modality,
                    pool.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A dense layer addressed by its weight and bias block indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

/// Stack of dense layers; tanh on hidden layers, optional tanh on the output.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
    pub tanh_output: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Topology {
    pub encoder: Mlp,
    pub attention: usize,
    pub attention_score: usize,
    pub projection: Dense,
    pub heads: Vec<Mlp>,
    pub value: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    blocks: Vec<Block>,
    total: usize,
    pub(crate) topology: Topology,
}

struct LayoutBuilder {
    blocks: Vec<Block>,
    total: usize,
}

impl LayoutBuilder {
    fn block(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.blocks.push(Block {
            name,
            rows,
            cols,
            offset: self.total,
        });
        self.total += rows * cols;
        self.blocks.len() - 1
    }

    fn dense(&mut self, prefix: &str, inputs: usize, outputs: usize) -> Dense {
        Dense {
            weight: self.block(format!("{prefix}.weight"), outputs, inputs),
            bias: self.block(format!("{prefix}.bias"), outputs, 1),
            inputs,
            outputs,
        }
    }
}

impl Layout {
    pub fn new(dims: &AgentDims) -> Layout {
        let mut b = LayoutBuilder {
            blocks: Vec::new(),
            total: 0,
        };
        let encoder = Mlp {
            layers: vec![
                b.dense("encoder.0", dims.descriptor_dim, dims.feature_dim),
                b.dense("encoder.1", dims.feature_dim, dims.feature_dim),
            ],
            tanh_output: true,
        };
        let attention = b.block(
            "attention.weight".into(),
            dims.attention_dim,
            dims.feature_dim,
        );
        let attention_score = b.block("attention.score".into(), dims.attention_dim, 1);
        let projection = b.dense("projection", dims.feature_dim, dims.pooled_dim);

        let mut heads = Vec::with_capacity(dims.heads.len());
        for head in &dims.heads {
            let mut widths = vec![dims.pooled_dim];
            widths.extend(&dims.head_hidden);
            widths.push(head.outputs);
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| b.dense(&format!("head.{}.{i}", head.modality), w[0], w[1]))
                .collect();
            heads.push(Mlp {
                layers,
                tanh_output: false,
            });
        }
        let value = Mlp {
            layers: vec![
                b.dense("value.0", dims.pooled_dim, dims.value_hidden),
                b.dense("value.1", dims.value_hidden, 1),
            ],
            tanh_output: false,
        };

        Layout {
            blocks: b.blocks,
            total: b.total,
            topology: Topology {
                encoder,
                attention,
                attention_score,
                projection,
                heads,
                value,
            },
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn block(&self, idx: usize) -> &Block {
        &self.blocks[idx]
    }

    /// Name of the block owning flat index `i`.
    pub fn block_name_at(&self, i: usize) -> &str {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&i))
            .map_or("?", |b| b.name.as_str())
    }

    /// First block containing a non-finite entry, if any.
    pub fn first_non_finite(&self, values: &[f64]) -> Option<&str> {
        values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| self.block_name_at(i))
    }
}

/// All trainable parameters of the selection agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub dims: AgentDims,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl AgentParams {
    pub fn zeros(dims: AgentDims) -> Self {
        let layout = Layout::new(&dims);
        let values = vec![0.0; layout.len()];
        Self {
            dims,
            layout,
            values,
        }
    }

    /// Glorot-uniform weights, zero biases. The last layer of every policy
    /// head is shrunk so the initial policy is close to uniform, and the
    /// value output starts at zero.
    pub fn init(dims: AgentDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = p.layout.topology.clone();
        let mut fill =
            |p: &mut AgentParams, block: usize, fan_in: usize, fan_out: usize, scale: f64| {
                let limit = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
                let range = p.layout.block(block).range();
                for v in &mut p.values[range] {
                    *v = rng.random_range(-limit..limit);
                }
            };
        for l in &topo.encoder.layers {
            fill(&mut p, l.weight, l.inputs, l.outputs, 1.0);
        }
        let (a_rows, a_cols) = {
            let b = p.layout.block(topo.attention);
            (b.rows, b.cols)
        };
        fill(&mut p, topo.attention, a_cols, a_rows, 1.0);
        fill(&mut p, topo.attention_score, a_rows, 1, 1.0);
        let pr = topo.projection;
        fill(&mut p, pr.weight, pr.inputs, pr.outputs, 1.0);
        for head in &topo.heads {
            let last = head.layers.len() - 1;
            for (i, l) in head.layers.iter().enumerate() {
                let scale = if i == last { 0.1 } else { 1.0 };
                fill(&mut p, l.weight, l.inputs, l.outputs, scale);
            }
        }
        let v0 = topo.value.layers[0];
        fill(&mut p, v0.weight, v0.inputs, v0.outputs, 1.0);
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn slice(&self, block: usize) -> &[f64] {
        &self.values[self.layout.block(block).range()]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.layout.first_non_finite(&self.values) {
            Some(name) => Err(Error::Numeric {
                block: name.to_string(),
            }),
            None => Ok(()),
        }
    }
}

const CHECKPOINT_FORMAT: &str = "modelpick-agent";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: AgentDims,
    /// Flattening-order manifest.
    pub layout: Vec<Block>,
    pub params: Vec<f64>,
    /// Lagrange multiplier when the checkpoint was taken, if from training.
    pub lambda: Option<f64>,
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn from_params(params: &AgentParams, lambda: Option<f64>, epoch: Option<usize>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims: params.dims.clone(),
            layout: params.layout.blocks().to_vec(),
            params: params.values.clone(),
            lambda,
            epoch,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_params(self) -> Result<AgentParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.dims.validate()?;
        let layout = Layout::new(&self.dims);
        if layout.blocks() != self.layout.as_slice() {
            return Err(Error::Shape(
                "checkpoint layout manifest does not match its dims".into(),
            ));
        }
        if self.params.len() != layout.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} parameters, layout needs {}",
                self.params.len(),
                layout.len()
            )));
        }
        let params = AgentParams {
            dims: self.dims,
            layout,
            values: self.params,
        };
        params.check_finite()?;
        Ok(params)
    }
}
