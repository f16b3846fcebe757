use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modelpick"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small world and a short training config in a fresh directory.
fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("world_cfg.json"),
        r#"{"identities": 8, "samples_per_identity": 3}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("train.json"),
        r#"{"epochs": 4, "pairs_per_epoch": 32, "checkpoint_every": 2}"#,
    )
    .unwrap();
    fs::copy(
        configs().join("pools_ccvid.json"),
        dir.path().join("pools.json"),
    )
    .unwrap();
    fs::copy(
        configs().join("protocol.json"),
        dir.path().join("protocol.json"),
    )
    .unwrap();
    let o = run(
        &[
            "gen-world",
            "--config",
            "world_cfg.json",
            "--seed",
            "5",
            "--out",
            "world.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn train(dir: &Path, out: &str) -> Output {
    run(
        &[
            "train",
            "--world",
            "world.json",
            "--pools",
            "pools.json",
            "--config",
            "train.json",
            "--out",
            out,
        ],
        dir,
    )
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn gen_world_is_deterministic() {
    let dir = setup();
    let o = run(
        &[
            "gen-world",
            "--config",
            "world_cfg.json",
            "--seed",
            "5",
            "--out",
            "again.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(dir.path().join("world.json")).unwrap(),
        fs::read(dir.path().join("again.json")).unwrap()
    );
    let o = run(
        &[
            "gen-world",
            "--config",
            "world_cfg.json",
            "--seed",
            "6",
            "--out",
            "other.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(dir.path().join("world.json")).unwrap(),
        fs::read(dir.path().join("other.json")).unwrap()
    );
}

#[test]
fn malformed_json_reports_location() {
    let dir = setup();
    fs::write(
        dir.path().join("bad.json"),
        "{\n  \"identities\": 5,\n  oops\n}",
    )
    .unwrap();
    let o = run(
        &["gen-world", "--config", "bad.json", "--out", "w.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("line 3"), "{err}");
    assert!(!dir.path().join("w.json").exists());
}

#[test]
fn invalid_values_exit_2() {
    let dir = setup();
    fs::write(dir.path().join("w0.json"), r#"{"identities": 1}"#).unwrap();
    assert_eq!(
        code(&run(
            &["gen-world", "--config", "w0.json", "--out", "w.json"],
            dir.path()
        )),
        2
    );
    fs::write(dir.path().join("t0.json"), r#"{"batch_size": 0}"#).unwrap();
    let o = run(
        &[
            "train",
            "--world",
            "world.json",
            "--pools",
            "pools.json",
            "--config",
            "t0.json",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("batch_size"));
    let o = run(
        &[
            "train",
            "--world",
            "missing.json",
            "--pools",
            "pools.json",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn train_emits_manifest_and_respects_clamp() {
    let dir = setup();
    let before: Vec<Vec<u8>> = ["world.json", "pools.json", "train.json"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    let o = train(dir.path(), "run");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run_dir = dir.path().join("run");
    let m = manifest(&run_dir);
    let artifacts: Vec<String> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(&run_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    let mut listed = artifacts.clone();
    listed.sort();
    assert_eq!(listed, on_disk);
    assert!(artifacts.contains(&"checkpoint_epoch0002.json".to_string()));
    assert!(artifacts.contains(&"checkpoint_final.json".to_string()));

    let hash = hex::encode(Sha256::digest(
        fs::read(dir.path().join("train.json")).unwrap(),
    ));
    assert_eq!(m["config_hash"], hash);
    assert_eq!(m["seed"], 0);

    let csv = fs::read_to_string(run_dir.join("steps.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "lambda").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4 * 4);
    assert!(rows
        .iter()
        .all(|r| r.split(',').nth(col).unwrap().parse::<f64>().unwrap() >= 0.0));

    let after: Vec<Vec<u8>> = ["world.json", "pools.json", "train.json"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup();
    assert_eq!(code(&train(dir.path(), "a")), 0);
    let o = run(
        &[
            "train",
            "--world",
            "world.json",
            "--pools",
            "pools.json",
            "--config",
            "train.json",
            "--seed",
            "9",
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(manifest(&dir.path().join("b"))["seed"], 9);
    assert_ne!(
        fs::read(dir.path().join("a/checkpoint_final.json")).unwrap(),
        fs::read(dir.path().join("b/checkpoint_final.json")).unwrap()
    );
}

#[test]
fn numeric_failure_exits_3_and_keeps_last_good() {
    let dir = setup();
    fs::write(
        dir.path().join("hot.json"),
        r#"{"epochs": 3, "pairs_per_epoch": 32, "learning_rate": 1e300}"#,
    )
    .unwrap();
    let o = run(
        &[
            "train",
            "--world",
            "world.json",
            "--pools",
            "pools.json",
            "--config",
            "hot.json",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
    let run_dir = dir.path().join("run");
    assert!(run_dir.join("checkpoint_last_good.json").exists());
    assert!(!run_dir.join("checkpoint_final.json").exists());
    let ckpt: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("checkpoint_last_good.json")).unwrap())
            .unwrap();
    assert!(ckpt["params"]
        .as_array()
        .unwrap()
        .iter()
        .all(|v| v.as_f64().is_some_and(f64::is_finite)));
    let listed = manifest(&run_dir)["artifacts"].to_string();
    assert!(listed.contains("checkpoint_last_good.json"));
}

#[test]
fn eval_report_and_histogram() {
    let dir = setup();
    assert_eq!(code(&train(dir.path(), "run")), 0);
    let args = [
        "eval",
        "--world",
        "world.json",
        "--pools",
        "pools.json",
        "--checkpoint",
        "run/checkpoint_final.json",
        "--config",
        "protocol.json",
        "--out",
        "ev",
    ];
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = dir.path().join("ev");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
    for field in ["rank1", "map", "avg_gflops"] {
        assert!(report[field].is_f64(), "{field}");
    }
    let hist = fs::read_to_string(ev.join("histogram.csv")).unwrap();
    let mut total = 0.0;
    let mut gflops = 0.0;
    for line in hist.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let f: f64 = cols[2].parse().unwrap();
        total += f;
        gflops += f * cols[3].parse::<f64>().unwrap();
    }
    assert!((total - 1.0).abs() < 1e-9);
    let avg = report["avg_gflops"].as_f64().unwrap();
    assert!((gflops - avg).abs() <= 1e-9 * avg);
    let scores = fs::read_to_string(ev.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 16);
}

#[test]
fn eval_dimension_mismatch_names_head() {
    let dir = setup();
    assert_eq!(code(&train(dir.path(), "run")), 0);
    fs::copy(
        configs().join("pools_mevid.json"),
        dir.path().join("mevid.json"),
    )
    .unwrap();
    let o = run(
        &[
            "eval",
            "--world",
            "world.json",
            "--pools",
            "mevid.json",
            "--checkpoint",
            "run/checkpoint_final.json",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("head `body`"), "{}", stderr(&o));
}

#[test]
fn baselines_enumerate_and_pareto() {
    let dir = setup();
    let o = run(
        &[
            "baselines",
            "--world",
            "world.json",
            "--pools",
            "pools.json",
            "--config",
            "protocol.json",
            "--out",
            "bl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bl = dir.path().join("bl");
    let constants: serde_json::Value =
        serde_json::from_slice(&fs::read(bl.join("constant_combos.json")).unwrap()).unwrap();
    assert_eq!(constants.as_array().unwrap().len(), 27);
    for c in constants.as_array().unwrap() {
        let h = c["report"]["selection_histogram"].as_array().unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0]["frequency"], 1.0);
    }
    let subsets: serde_json::Value =
        serde_json::from_slice(&fs::read(bl.join("subset_min_max.json")).unwrap()).unwrap();
    assert_eq!(subsets.as_array().unwrap().len(), 7);
    let full = subsets.as_array().unwrap().last().unwrap();
    let max = full["max"]["report"]["avg_gflops"].as_f64().unwrap();
    assert_eq!(format!("{max:.1}"), "706.1");

    let pareto = fs::read_to_string(bl.join("pareto.csv")).unwrap();
    assert_eq!(pareto.lines().next().unwrap(), "combo_id,gflops,rank1,map");
    let oracle: serde_json::Value =
        serde_json::from_slice(&fs::read(bl.join("oracle.json")).unwrap()).unwrap();
    assert_eq!(oracle["combinations"], 27);
    assert!(
        oracle["best_constant_mean_reward"].as_f64().unwrap()
            <= oracle["per_input_mean_reward"].as_f64().unwrap()
    );
}

#[test]
fn baselines_cap_exceeded_exits_2() {
    let dir = setup();
    fs::write(dir.path().join("tight.json"), r#"{"combination_cap": 10}"#).unwrap();
    let o = run(
        &[
            "baselines",
            "--world",
            "world.json",
            "--pools",
            "pools.json",
            "--config",
            "tight.json",
            "--out",
            "bl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("27"), "{}", stderr(&o));
    assert!(!dir.path().join("bl").exists());
}

#[test]
fn threads_flag_does_not_change_outputs() {
    let dir = setup();
    let base = [
        "eval",
        "--world",
        "world.json",
        "--pools",
        "pools.json",
        "--checkpoint",
        "run/checkpoint_final.json",
    ];
    assert_eq!(code(&train(dir.path(), "run")), 0);
    let mut one = vec!["--threads", "1"];
    one.extend(base);
    one.extend(["--out", "e1"]);
    let mut four = vec!["--threads", "4"];
    four.extend(base);
    four.extend(["--out", "e4"]);
    assert_eq!(code(&run(&one, dir.path())), 0);
    assert_eq!(code(&run(&four, dir.path())), 0);
    for f in ["report.json", "scores.csv", "histogram.csv"] {
        assert_eq!(
            fs::read(dir.path().join("e1").join(f)).unwrap(),
            fs::read(dir.path().join("e4").join(f)).unwrap(),
            "{f}"
        );
    }
}
