use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use modelpick::agent::Checkpoint;
use modelpick::eval::{
    brute_force_oracle, evaluate_fixed_combo, evaluate_fixed_combo_with, evaluate_policy_with,
    EvalReport, ProtocolConfig,
};
use modelpick::pool::{Modality, PoolSet};
use modelpick::simworld::{World, WorldConfig};
use modelpick::training::{write_step_csv, TrainConfig, Trainer};
use modelpick::Error;

use crate::manifest::RunManifest;

/// 3 for numeric failures during a run, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(Error::Numeric { .. }) = cause.downcast_ref::<Error>() {
            return 3;
        }
    }
    2
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn text(bytes: &[u8], path: &Path) -> Result<String> {
    String::from_utf8(bytes.to_vec()).with_context(|| format!("{} is not UTF-8", path.display()))
}

fn write(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    manifest.artifacts.push(name.to_string());
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn finish(dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    manifest.artifacts.push("manifest.json".into());
    let bytes = json(manifest)?;
    fs::write(dir.join("manifest.json"), bytes)
        .with_context(|| format!("cannot write manifest in {}", dir.display()))
}

fn load_world(path: &Path, manifest: &mut RunManifest) -> Result<World> {
    let bytes = read(path)?;
    let world = World::from_snapshot_json(&text(&bytes, path)?)
        .with_context(|| format!("invalid world snapshot {}", path.display()))?;
    manifest.input("world", path, &bytes);
    Ok(world)
}

fn load_pools(path: &Path, manifest: &mut RunManifest) -> Result<PoolSet> {
    let bytes = read(path)?;
    let pools = PoolSet::from_json(&text(&bytes, path)?)
        .with_context(|| format!("invalid pools {}", path.display()))?;
    manifest.input("pools", path, &bytes);
    Ok(pools)
}

/// Config bytes (file or serialized defaults) and the parsed config.
fn load_config<T: Serialize + Default>(
    path: Option<&Path>,
    parse: impl Fn(&str) -> modelpick::Result<T>,
    what: &str,
) -> Result<(Vec<u8>, T)> {
    match path {
        Some(p) => {
            let bytes = read(p)?;
            let cfg = parse(&text(&bytes, p)?)
                .with_context(|| format!("invalid {what} {}", p.display()))?;
            Ok((bytes, cfg))
        }
        None => {
            let cfg = T::default();
            Ok((serde_json::to_vec(&cfg)?, cfg))
        }
    }
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

pub fn gen_world(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let bytes = read(config)?;
    let cfg = WorldConfig::from_json(&text(&bytes, config)?)
        .with_context(|| format!("invalid world config {}", config.display()))?;
    let world = World::generate(seed, &cfg)?;
    let mut snapshot = world.to_snapshot_json()?;
    snapshot.push('\n');
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, snapshot).with_context(|| format!("cannot write {}", out.display()))?;
    info!("wrote {} samples to {}", world.samples.len(), out.display());
    Ok(())
}

pub fn train(
    world_path: &Path,
    pools_path: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let (cfg_bytes, mut cfg) = load_config(config, TrainConfig::from_json, "training config")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut manifest = RunManifest::new("train", Some(cfg.seed), config, &cfg_bytes);
    let world = load_world(world_path, &mut manifest)?;
    let pools = load_pools(pools_path, &mut manifest)?;
    let mut trainer = Trainer::new(&world, &pools, &cfg)?;
    create_dir(out)?;

    let every = cfg.checkpoint_every.filter(|&n| n > 0);
    let mut periodic = Vec::new();
    let run = trainer.run_with(|t| {
        let epoch = t.epoch();
        if epoch % 10 == 0 || t.is_done() {
            if let Some(r) = t.records().last() {
                info!(
                    "epoch {epoch}: lambda {:.4} cost {:.3} reward {:.4}",
                    r.lambda, r.mean_cost, r.mean_reward
                );
            }
        }
        if every.is_some_and(|n| epoch % n == 0) && !t.is_done() {
            let name = format!("checkpoint_epoch{epoch:04}.json");
            let ckpt =
                Checkpoint::from_params(t.params(), Some(t.controller().lambda), Some(epoch));
            fs::write(out.join(&name), ckpt.to_json()?)?;
            periodic.push(name);
        }
        Ok(())
    });
    manifest.artifacts.extend(periodic);

    let mut csv = Vec::new();
    write_step_csv(&mut csv, trainer.records())?;
    write(out, "steps.csv", &csv, &mut manifest)?;

    let ckpt = Checkpoint::from_params(
        trainer.params(),
        Some(trainer.controller().lambda),
        Some(trainer.epoch()),
    );
    match run {
        Ok(()) => {
            write(
                out,
                "checkpoint_final.json",
                ckpt.to_json()?.as_bytes(),
                &mut manifest,
            )?;
            finish(out, &mut manifest)?;
            info!(
                "training finished, lambda {:.4}",
                trainer.controller().lambda
            );
            Ok(())
        }
        Err(e) => {
            // parameters are untouched by the failed step
            write(
                out,
                "checkpoint_last_good.json",
                ckpt.to_json()?.as_bytes(),
                &mut manifest,
            )?;
            finish(out, &mut manifest)?;
            Err(e).context(format!("training failed at epoch {}", trainer.epoch()))
        }
    }
}

pub fn eval(
    world_path: &Path,
    pools_path: &Path,
    checkpoint: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (cfg_bytes, _protocol) = load_config(config, ProtocolConfig::from_json, "protocol config")?;
    let mut manifest = RunManifest::new("eval", None, config, &cfg_bytes);
    let world = load_world(world_path, &mut manifest)?;
    let pools = load_pools(pools_path, &mut manifest)?;
    let bytes = read(checkpoint)?;
    let params = Checkpoint::from_json(&text(&bytes, checkpoint)?)
        .and_then(Checkpoint::into_params)
        .with_context(|| format!("invalid checkpoint {}", checkpoint.display()))?;
    manifest.input("checkpoint", checkpoint, &bytes);
    params.dims.check_pools(&pools).with_context(|| {
        format!(
            "checkpoint {} does not fit pools {}",
            checkpoint.display(),
            pools_path.display()
        )
    })?;

    let (report, scores) = evaluate_policy_with(&world, &world, &pools, &params)?;
    create_dir(out)?;
    write(out, "report.json", &json(&report)?, &mut manifest)?;
    let mut hist = Vec::new();
    report.write_histogram_csv(&mut hist)?;
    write(out, "histogram.csv", &hist, &mut manifest)?;
    let mut csv = Vec::new();
    scores.write_csv(&mut csv)?;
    write(out, "scores.csv", &csv, &mut manifest)?;
    finish(out, &mut manifest)?;
    info!(
        "rank1 {:.4} map {:.4} avg_gflops {:.2}",
        report.rank1, report.map, report.avg_gflops
    );
    Ok(())
}

#[derive(Serialize)]
struct ComboReport {
    combo: String,
    report: EvalReport,
}

#[derive(Serialize)]
struct SubsetSummary {
    modalities: Vec<Modality>,
    min: ComboReport,
    max: ComboReport,
}

#[derive(Serialize)]
struct OracleSummary {
    lambda: f64,
    reward_pairs: usize,
    combinations: u64,
    best_constant: String,
    best_constant_mean_reward: f64,
    per_input_mean_reward: f64,
}

fn subsets(modalities: &[Modality]) -> Vec<Vec<Modality>> {
    (1u32..(1 << modalities.len()))
        .map(|mask| {
            modalities
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, m)| m.clone())
                .collect()
        })
        .collect()
}

pub fn baselines(
    world_path: &Path,
    pools_path: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (cfg_bytes, protocol) = load_config(config, ProtocolConfig::from_json, "protocol config")?;
    let mut manifest = RunManifest::new("baselines", Some(protocol.pair_seed), config, &cfg_bytes);
    let world = load_world(world_path, &mut manifest)?;
    let pools = load_pools(pools_path, &mut manifest)?;

    // refuse before doing any work
    let oracle = brute_force_oracle(&world, &pools, protocol.lambda, &protocol)?;

    let constants = pools
        .joint_actions()
        .into_iter()
        .map(|a| {
            Ok(ComboReport {
                combo: pools.combo_id(&a),
                report: evaluate_fixed_combo(&world, &pools, &a)?,
            })
        })
        .collect::<modelpick::Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    for subset in subsets(&pools.modalities()) {
        let sub = pools.restrict(&subset)?;
        let row = |a| -> modelpick::Result<ComboReport> {
            Ok(ComboReport {
                combo: sub.combo_id(&a),
                report: evaluate_fixed_combo_with(&world, &world, &sub, &a)?.0,
            })
        };
        summaries.push(SubsetSummary {
            modalities: sub.modalities(),
            min: row(sub.min_combo())?,
            max: row(sub.max_combo())?,
        });
    }

    let mut pareto = String::from("combo_id,gflops,rank1,map\n");
    let mut seen = std::collections::BTreeSet::new();
    let rows = constants
        .iter()
        .chain(summaries.iter().flat_map(|s| [&s.min, &s.max]));
    for r in rows {
        if seen.insert(r.combo.clone()) {
            pareto.push_str(&format!(
                "{},{},{},{}\n",
                r.combo, r.report.avg_gflops, r.report.rank1, r.report.map
            ));
        }
    }

    let summary = OracleSummary {
        lambda: protocol.lambda,
        reward_pairs: protocol.reward_pairs,
        combinations: oracle.combinations,
        best_constant: pools.combo_id(&oracle.best_constant),
        best_constant_mean_reward: oracle.best_constant_mean,
        per_input_mean_reward: oracle.per_input_mean,
    };

    create_dir(out)?;
    write(
        out,
        "constant_combos.json",
        &json(&constants)?,
        &mut manifest,
    )?;
    write(
        out,
        "subset_min_max.json",
        &json(&summaries)?,
        &mut manifest,
    )?;
    write(out, "oracle.json", &json(&summary)?, &mut manifest)?;
    write(out, "pareto.csv", pareto.as_bytes(), &mut manifest)?;
    finish(out, &mut manifest)?;
    info!(
        "{} constant combos; best constant {} ({:.4})",
        constants.len(),
        summary.best_constant,
        summary.best_constant_mean_reward
    );
    Ok(())
}
