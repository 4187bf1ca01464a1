use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use engnn_core::chansim::ScenarioKind;
use engnn_core::harness::{Checkpoint, TrainConfig, SAMPLES_HEADER, SWEEP_HEADER};

fn engnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = engnn(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A tiny two-pair training config on disk.
fn tiny_config(dir: &Path) -> PathBuf {
    let mut c = TrainConfig::default_for(ScenarioKind::Ic);
    c.scenario.n_bs = 2;
    c.scenario.n_ue = 2;
    c.epochs = 2;
    c.batches_per_epoch = 2;
    c.batch_size = 4;
    c.checkpoint = Some(dir.join("model.ckpt"));
    let path = dir.join("train.toml");
    std::fs::write(&path, c.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn train_writes_a_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let metrics = dir.path().join("metrics.csv");
    ok(&["train", "--config", s(&cfg), "--out", s(&metrics)]);
    let ck = Checkpoint::load(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(ck.epochs_done, 2);
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.starts_with("run_id,epoch,mean_sum_rate,residual_max,seconds\n"));
    assert_eq!(text.lines().count(), 3);

    let other = dir.path().join("other.ckpt");
    ok(&["train", "--config", s(&cfg), "--checkpoint", s(&other), "--seed", "9"]);
    assert_eq!(Checkpoint::load(&other).unwrap().train.seed, 9);
}

#[test]
fn eval_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--config", s(&tiny_config(dir.path()))]);
    let ck = dir.path().join("model.ckpt");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "eval",
            "--checkpoint",
            s(&ck),
            "--samples",
            "100",
            "--seed",
            "7",
            "--baseline",
            "wmmse",
            "--out",
            s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with(&SAMPLES_HEADER.join(",")));
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--config", s(&tiny_config(dir.path()))]);
    let ck = dir.path().join("model.ckpt");
    let out = ok(&[
        "sweep",
        "--checkpoint",
        s(&ck),
        "--axis",
        "n_pairs",
        "--values",
        "2,3,5",
        "--samples",
        "4",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER.join(","));
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("n_pairs,5.0,4,"));

    let bad = engnn(&["sweep", "--checkpoint", s(&ck), "--axis", "n_ues", "--values", "3"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error kind=config"));
}

#[test]
fn generated_datasets_feed_eval_and_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("coop.bin");
    ok(&[
        "gen",
        "--scenario",
        "coop",
        "--samples",
        "5",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    let out = ok(&["baseline", "--data", s(&data), "--baseline", "gp"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().nth(1).unwrap().contains(",gp,"));

    // the dataset holds exactly what fresh generation with the same seed gives
    let fresh = ok(&[
        "baseline",
        "--scenario",
        "coop",
        "--samples",
        "5",
        "--seed",
        "3",
        "--baseline",
        "gp",
    ]);
    assert_eq!(fresh.stdout, text.as_bytes());

    let cfg = dir.path().join("coop.toml");
    let mut c = TrainConfig::default_for(ScenarioKind::Coop);
    c.epochs = 0;
    c.checkpoint = Some(dir.path().join("coop.ckpt"));
    std::fs::write(&cfg, c.to_toml().unwrap()).unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let eval = ok(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("coop.ckpt")),
        "--data",
        s(&data),
    ]);
    assert_eq!(String::from_utf8(eval.stdout).unwrap().lines().count(), 6);
}

#[test]
fn config_prints_a_loadable_default() {
    let out = ok(&["config", "--scenario", "ibc"]);
    let c = TrainConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(c, TrainConfig::default_for(ScenarioKind::Ibc));
}

#[test]
fn unknown_flags_print_usage_and_fail() {
    let out = engnn(&["eval", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
    let out = engnn(&["eval", "--checkpoint", "x", "--baseline", "simplex"]);
    assert!(!out.status.success());
}

#[test]
fn failures_emit_a_machine_readable_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = engnn(&["eval", "--checkpoint", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.lines().any(|l| l.starts_with("error kind=io message=")), "{err}");

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let err = String::from_utf8(engnn(&["eval", "--checkpoint", s(&junk)]).stderr).unwrap();
    assert!(err.contains("error kind=format"), "{err}");

    let out = engnn(&["train"]);
    assert!(String::from_utf8(out.stderr).unwrap().contains("error kind=config"));
}
