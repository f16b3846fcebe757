use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::budget::BudgetController;
use super::loss::{gradient_from_traces, LossCoefficients};
use super::optim::{optimizer_step, Adam};
use super::reward::{fused_similarity, reward};
use super::TrainConfig;
use crate::agent::{forward, sample_action, AgentDims, AgentParams, SelectionDistribution};
use crate::error::{Error, Result};
use crate::pool::PoolSet;
use crate::simworld::{make_pairs, stream_key, PairSample, SimilaritySource, World};

/// Telemetry for one optimizer step. `lambda` is the value after the batch's
/// update; `target` is the cost target the update used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub target: f64,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub lambda: f64,
    pub mean_entropy: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub grad_norm: f64,
}

pub fn write_step_csv<W: Write>(out: W, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_step_csv<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub struct TrainOutcome {
    pub params: AgentParams,
    pub records: Vec<StepRecord>,
    pub lambda: f64,
}

/// Single-writer training state.
pub struct Trainer<'w, S: SimilaritySource> {
    world: &'w World,
    source: &'w S,
    pools: PoolSet,
    config: TrainConfig,
    params: AgentParams,
    adam: Adam,
    controller: BudgetController,
    rng: ChaCha8Rng,
    epoch: usize,
    records: Vec<StepRecord>,
}

impl<'w> Trainer<'w, World> {
    pub fn new(world: &'w World, pools: &PoolSet, config: &TrainConfig) -> Result<Self> {
        Self::with_source(world, world, pools, config)
    }
}

impl<'w, S: SimilaritySource> Trainer<'w, S> {
    pub fn with_source(
        world: &'w World,
        source: &'w S,
        pools: &PoolSet,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        world.check_pools(pools)?;
        let dims = AgentDims::new(world.descriptor_dim(), &config.agent, pools)?;
        let params = AgentParams::init(dims, stream_key(config.seed, &[b"init"]));
        let adam = Adam::new(
            params.len(),
            config.learning_rate,
            config.weight_decay,
            config.adam,
        );
        let controller = BudgetController::new(
            config.lambda_init,
            config.eta,
            config.target_cost,
            config.curriculum,
        );
        Ok(Self {
            world,
            source,
            pools: pools.clone(),
            config: config.clone(),
            params,
            adam,
            controller,
            rng: ChaCha8Rng::seed_from_u64(stream_key(config.seed, &[b"actions"])),
            epoch: 0,
            records: Vec::new(),
        })
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn controller(&self) -> &BudgetController {
        &self.controller
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            entropy_coeff: self.config.entropy_coeff,
            critic_weight: self.config.critic_weight,
        }
    }

    fn epoch_pairs(&self, epoch: usize) -> Result<Vec<PairSample<'w>>> {
        let seed = stream_key(self.config.seed, &[b"pairs", &(epoch as u64).to_le_bytes()]);
        make_pairs(
            self.world,
            self.config.pairs_per_epoch,
            self.config.positive_fraction,
            seed,
        )
    }

    /// Runs one epoch; returns the number of optimizer steps taken.
    pub fn run_epoch(&mut self) -> Result<usize> {
        let epoch = self.epoch;
        self.controller.begin_epoch(epoch, self.config.epochs);
        let pairs = self.epoch_pairs(epoch)?;
        let mut steps = 0;
        for (b, chunk) in pairs.chunks(self.config.batch_size).enumerate() {
            self.step_batch(epoch, b, chunk)?;
            steps += 1;
        }
        self.epoch += 1;
        Ok(steps)
    }

    /// Runs until `n` optimizer steps have been taken in total (or training
    /// ends), continuing across epoch boundaries.
    pub fn run_steps(&mut self, n: usize) -> Result<()> {
        while self.records.len() < n && !self.is_done() {
            let epoch = self.epoch;
            self.controller.begin_epoch(epoch, self.config.epochs);
            let pairs = self.epoch_pairs(epoch)?;
            let already = self.records.iter().filter(|r| r.epoch == epoch).count();
            for (b, chunk) in pairs
                .chunks(self.config.batch_size)
                .enumerate()
                .skip(already)
            {
                if self.records.len() >= n {
                    return Ok(());
                }
                self.step_batch(epoch, b, chunk)?;
            }
            self.epoch += 1;
        }
        Ok(())
    }

    fn step_batch(&mut self, epoch: usize, batch: usize, pairs: &[PairSample<'w>]) -> Result<()> {
        let lambda = self.controller.lambda;
        let mut traces = Vec::with_capacity(pairs.len());
        let mut actions = Vec::with_capacity(pairs.len());
        let mut rewards = Vec::with_capacity(pairs.len());
        let mut cost_sum = 0.0;
        for pair in pairs {
            let trace = forward(&self.params, &pair.probe.frames)?;
            if !trace.value().is_finite() || trace.logits().iter().flatten().any(|z| !z.is_finite())
            {
                return Err(Error::Numeric {
                    block: "policy outputs".into(),
                });
            }
            let dist = SelectionDistribution::from_logits(trace.logits());
            let drawn = sample_action(&dist, &self.pools, &mut self.rng)?;
            let s_final = fused_similarity(self.source, &self.pools, &drawn.action, pair)?;
            let cost = self.pools.normalized_cost(&drawn.action)?;
            cost_sum += cost;
            rewards.push(reward(s_final, pair.matched, lambda, cost));
            actions.push(drawn.action);
            traces.push(trace);
        }
        let mut grad = gradient_from_traces(
            &self.params,
            &self.pools,
            &traces,
            &actions,
            &rewards,
            self.coefficients(),
        )?;
        let grad_norm = optimizer_step(
            &mut self.params,
            &mut grad.values,
            &mut self.adam,
            self.config.clip_norm,
        )?;

        let n = pairs.len() as f64;
        let mean_cost = cost_sum / n;
        let target = self.controller.target;
        let lambda = self.controller.update_lambda(mean_cost);
        self.records.push(StepRecord {
            epoch,
            batch,
            target,
            mean_reward: rewards.iter().sum::<f64>() / n,
            mean_cost,
            lambda,
            mean_entropy: grad.outcomes.iter().map(|o| o.entropy).sum::<f64>() / n,
            actor_loss: grad.losses.actor,
            critic_loss: grad.losses.critic,
            grad_norm,
        });
        Ok(())
    }

    /// Runs every remaining epoch, calling `on_epoch` after each.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            lambda: self.controller.lambda,
            params: self.params,
            records: self.records,
        }
    }
}

/// Trains from scratch; fully determined by `config.seed`.
pub fn train(world: &World, pools: &PoolSet, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(world, pools, config)?;
    t.run_with(|_| Ok(()))?;
    Ok(t.finish())
}
