//! End-to-end tests of the command-line surface: exit codes, determinism,
//! resume, and the artifact layout.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sadm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sadm"))
}

fn run(args: &[&str]) -> Output {
    sadm().args(args).output().expect("spawn sadm")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// Small but complete training setup: phase 1 plus one adversarial round.
fn tiny_train_args<'a>(dir: &'a str, seed: &'a str) -> Vec<String> {
    [
        "train",
        "--seed",
        seed,
        "--out",
        dir,
        "--set",
        "trainer.phase1_steps=20",
        "--set",
        "trainer.phase1_tolerance=null",
        "--set",
        "trainer.adversarial_rounds=1",
        "--set",
        "trainer.steps_per_round_phi=4",
        "--set",
        "trainer.steps_per_round_theta=8",
        "--set",
        "trainer.batch_size=8",
        "--set",
        "model.denoiser_hidden=16",
        "--set",
        "model.encoder_hidden=8",
        "--set",
        "eval.n_samples=64",
        "--set",
        "eval.n_projections=16",
        "--set",
        "sampler.nfe=8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn identical_invocations_produce_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    for dir in [&dir_a, &dir_b] {
        let args = tiny_train_args(dir.to_str().unwrap(), "7");
        let out = sadm().args(&args).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let log_a = fs::read(dir_a.join("train_log.csv")).unwrap();
    let log_b = fs::read(dir_b.join("train_log.csv")).unwrap();
    assert_eq!(log_a, log_b, "run logs must be byte-identical");
    let ckpt_a = fs::read(dir_a.join("checkpoint.bin")).unwrap();
    let ckpt_b = fs::read(dir_b.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical");
}

#[test]
fn batch_size_below_two_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--out",
        tmp.path().to_str().unwrap(),
        "--set",
        "trainer.batch_size=1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("batch_size >= 2"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--out",
        tmp.path().to_str().unwrap(),
        "--set",
        "trainer.bath_size=8",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("trainer.bath_size"));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = run(&["train", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_magic_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("bogus.bin");
    fs::write(&bogus, b"XXXXjunkjunkjunk").unwrap();
    let out = run(&[
        "sample",
        "--checkpoint",
        bogus.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad magic"), "{}", stderr(&out));
}

#[test]
fn locked_run_directory_rejects_second_writer() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join(".lock"), "held").unwrap();
    let args = tiny_train_args(tmp.path().to_str().unwrap(), "1");
    let out = sadm().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("locked"), "{}", stderr(&out));
}

#[test]
fn interrupted_run_resumes_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let full_dir = tmp.path().join("full");
    let split_dir = tmp.path().join("split");

    // uninterrupted reference
    let args = tiny_train_args(full_dir.to_str().unwrap(), "11");
    let out = sadm().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    // interrupt after 10 steps, then resume in place
    let mut args = tiny_train_args(split_dir.to_str().unwrap(), "11");
    args.push("--max-steps".into());
    args.push("10".into());
    let out = sadm().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let mut args = tiny_train_args(split_dir.to_str().unwrap(), "11");
    args.push("--resume".into());
    args.push(split_dir.join("checkpoint.bin").to_str().unwrap().into());
    let out = sadm().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let log_full = fs::read(full_dir.join("train_log.csv")).unwrap();
    let log_split = fs::read(split_dir.join("train_log.csv")).unwrap();
    assert_eq!(log_full, log_split, "resumed log must match uninterrupted");
    let ckpt_full = fs::read(full_dir.join("checkpoint.bin")).unwrap();
    let ckpt_split = fs::read(split_dir.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt_full, ckpt_split);
}

#[test]
fn sample_writes_parseable_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let args = tiny_train_args(train_dir.to_str().unwrap(), "3");
    let out = sadm().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let sample_dir = tmp.path().join("gen");
    let out = run(&[
        "sample",
        "--checkpoint",
        train_dir.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        sample_dir.to_str().unwrap(),
        "-n",
        "17",
        "--set",
        "sampler.nfe=5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(sample_dir.join("samples.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 17);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 2);
        for f in fields {
            f.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn ablate_emits_three_mode_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "ablate",
        "--seed",
        "5",
        "--out",
        tmp.path().join("ab").to_str().unwrap(),
        "--set",
        "trainer.phase1_steps=10",
        "--set",
        "trainer.phase1_tolerance=null",
        "--set",
        "trainer.adversarial_rounds=1",
        "--set",
        "trainer.steps_per_round_phi=2",
        "--set",
        "trainer.steps_per_round_theta=4",
        "--set",
        "trainer.batch_size=8",
        "--set",
        "model.denoiser_hidden=16",
        "--set",
        "model.encoder_hidden=8",
        "--set",
        "eval.n_samples=64",
        "--set",
        "eval.n_projections=16",
        "--set",
        "sampler.nfe=8",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for mode in ["instance_only", "structure_guided", "full_sadm"] {
        assert!(stdout.contains(mode), "missing {mode} in:\n{stdout}");
    }
    let table = fs::read_to_string(tmp.path().join("ab").join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "header + 3 rows:\n{table}");
    assert!(table.starts_with("mode,sliced_wasserstein,mode_coverage,heatmap_gap"));
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let out = run(&[
        "gradcheck",
        "--seed",
        "2",
        "--set",
        "model.denoiser_hidden=8",
        "--set",
        "model.encoder_hidden=6",
        "--set",
        "model.embed_dim=3",
        "--set",
        "model.time_frequencies=4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn sadm_out_env_sets_default_root() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cmd = sadm();
    cmd.env("SADM_OUT", tmp.path());
    cmd.args([
        "verify",
        "--seed",
        "1",
    ]);
    // verify is slow-ish; use it only here where no other root would exist
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("verify").join("verification.txt").exists());
}
