use modelpick::agent::{act, greedy_action, AgentDims, AgentParams, Checkpoint};
use modelpick::eval::{brute_force_oracle_on, evaluate_policy, ProtocolConfig};
use modelpick::pool::{JointAction, Modality, ModalityPool, ModelSpec, PoolSet};
use modelpick::simworld::{World, WorldConfig};
use modelpick::training::{
    compute_gradients, read_step_csv, train, write_step_csv, LossCoefficients, TrainConfig,
    Trainer, Transition,
};

fn pools(specs: &[(&str, &[(f64, f64)])]) -> PoolSet {
    PoolSet::new(
        specs
            .iter()
            .map(|(m, models)| {
                let models = models
                    .iter()
                    .enumerate()
                    .map(|(i, &(c, d))| ModelSpec {
                        id: format!("{m}{i}"),
                        modality: Modality::default(),
                        cost_gflops: c,
                        discriminability: d,
                        embed_dim: 128,
                    })
                    .collect();
                ModalityPool::new(Modality::new(*m), 1, models)
            })
            .collect(),
    )
    .unwrap()
}

fn default_pools() -> PoolSet {
    let m: &[(f64, f64)] = &[(2.0, 0.4), (5.0, 0.6), (10.0, 0.9)];
    pools(&[("face", m), ("gait", m), ("body", m)])
}

fn small_world(noise: f64) -> World {
    let cfg = WorldConfig {
        identities: 10,
        noise_sigma: noise,
        ..WorldConfig::default()
    };
    World::generate(4, &cfg).unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        pairs_per_epoch: 64,
        ..TrainConfig::default()
    }
}

#[test]
fn record_count_is_epochs_times_batches() {
    let w = small_world(0.25);
    let out = train(&w, &default_pools(), &short(2)).unwrap();
    assert_eq!(out.records.len(), 2 * 8);
    assert_eq!(out.records[8].epoch, 1);
    assert_eq!(out.records[8].batch, 0);
    assert!(out
        .records
        .iter()
        .all(|r| r.lambda >= 0.0 && r.grad_norm.is_finite()));
    assert_eq!(out.lambda, out.records.last().unwrap().lambda);
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let w = small_world(0.25);
    let p = default_pools();
    let a = train(&w, &p, &short(3)).unwrap();
    let b = train(&w, &p, &short(3)).unwrap();
    assert_eq!(a.params.values, b.params.values);
    assert_eq!(a.records, b.records);
    let c = train(
        &w,
        &p,
        &TrainConfig {
            seed: 1,
            ..short(3)
        },
    )
    .unwrap();
    assert_ne!(a.params.values, c.params.values);
}

#[test]
fn stepwise_and_epochwise_runs_agree() {
    let w = small_world(0.25);
    let p = default_pools();
    let whole = train(&w, &p, &short(2)).unwrap();
    let mut t = Trainer::new(&w, &p, &short(2)).unwrap();
    t.run_steps(5).unwrap();
    t.run_steps(16).unwrap();
    assert!(t.is_done());
    assert_eq!(t.records(), whole.records.as_slice());
    assert_eq!(t.params().values, whole.params.values);
}

#[test]
fn step_csv_round_trips() {
    let w = small_world(0.25);
    let out = train(&w, &default_pools(), &short(2)).unwrap();
    let mut buf = Vec::new();
    write_step_csv(&mut buf, &out.records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("epoch,batch,target,mean_reward,mean_cost,lambda,"));
    assert_eq!(read_step_csv(buf.as_slice()).unwrap(), out.records);
}

#[test]
fn generous_budget_drives_lambda_to_zero() {
    let w = small_world(0.25);
    let cfg = TrainConfig {
        target_cost: 1.0,
        curriculum: modelpick::training::Curriculum {
            start: 1.0,
            warmup_fraction: 0.3,
        },
        eta: 0.05,
        ..short(4)
    };
    let out = train(&w, &default_pools(), &cfg).unwrap();
    assert!(out.records.windows(2).all(|p| p[1].lambda <= p[0].lambda));
    assert_eq!(out.lambda, 0.0);
}

#[test]
fn checkpoint_reproduces_the_policy() {
    let w = small_world(0.25);
    let p = default_pools();
    let out = train(&w, &p, &short(2)).unwrap();
    let json = Checkpoint::from_params(&out.params, Some(out.lambda), Some(2))
        .to_json()
        .unwrap();
    let restored = Checkpoint::from_json(&json).unwrap().into_params().unwrap();
    assert_eq!(
        evaluate_policy(&w, &p, &restored).unwrap(),
        evaluate_policy(&w, &p, &out.params).unwrap()
    );
}

#[test]
fn value_head_gradient_is_twice_the_residual_times_dv() {
    let w = small_world(0.25);
    let p = default_pools();
    let dims = AgentDims::new(w.descriptor_dim(), &TrainConfig::default().agent, &p).unwrap();
    let params = AgentParams::init(dims, 3);
    let probe = &w.samples[5];
    let reward = 0.37;
    let batch = [Transition {
        probe,
        action: JointAction(vec![vec![0], vec![1], vec![2]]),
        reward,
    }];
    let coeffs = LossCoefficients {
        entropy_coeff: 0.0,
        critic_weight: 1.0,
    };
    let grad = compute_gradients(&params, &p, &batch, coeffs)
        .unwrap()
        .values;
    let v0 = act(probe, &params, &p).unwrap().1;
    let h = 1e-6;
    let mut checked = 0;
    for block in params
        .layout
        .blocks()
        .iter()
        .filter(|b| b.name.starts_with("value."))
    {
        for j in block.range() {
            let mut q = params.clone();
            q.values[j] += h;
            let up = act(probe, &q, &p).unwrap().1;
            q.values[j] -= 2.0 * h;
            let down = act(probe, &q, &p).unwrap().1;
            let expected = 2.0 * (v0 - reward) * (up - down) / (2.0 * h);
            assert!(
                (grad[j] - expected).abs() < 1e-7,
                "{}[{j}]: {} vs {expected}",
                block.name,
                grad[j]
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn noise_free_policy_finds_the_oracle_combo() {
    // the cheapest face model is also the most discriminative
    let face: &[(f64, f64)] = &[(1.0, 1.0), (6.0, 0.5), (12.0, 0.3)];
    let other: &[(f64, f64)] = &[(1.0, 0.9), (6.0, 0.6), (12.0, 0.4)];
    let p = pools(&[("face", face), ("gait", other), ("body", other)]);
    let w = small_world(0.0);
    let cfg = TrainConfig {
        epochs: 60,
        pairs_per_epoch: 64,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let out = train(&w, &p, &cfg).unwrap();
    let protocol = ProtocolConfig::default();
    let pairs = protocol.pairs(&w).unwrap();
    let oracle = brute_force_oracle_on(&w, &p, &pairs, out.lambda, 10_000).unwrap();
    assert_eq!(oracle.best_constant, p.min_combo());
    let report = evaluate_policy(&w, &p, &out.params).unwrap();
    let top = report
        .selection_histogram
        .iter()
        .max_by_key(|c| c.count)
        .unwrap();
    assert_eq!(
        top.action, oracle.best_constant,
        "{:?}",
        report.selection_histogram
    );
    let probe = &w.samples[1];
    let (dist, _) = act(probe, &out.params, &p).unwrap();
    assert_eq!(greedy_action(&dist, &p).action.0[0], vec![0]);
}
