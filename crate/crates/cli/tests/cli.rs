use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sme(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sme"))
        .args(args)
        .current_dir(dir)
        .env_remove("SME_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn gen_default(dir: &Path) {
    let out = sme(dir, &["gen", "--seed", "1", "--out", "env.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let (header, rows) = csv_rows(text);
    let idx = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn gen_writes_default_manifest_and_run_log() {
    let dir = tempfile::tempdir().unwrap();
    gen_default(dir.path());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("env.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_state"], 8);
    assert_eq!(manifest["n_action"], 4);
    assert_eq!(manifest["reward_interval"], 1);
    assert_eq!(manifest["horizon"], 100);
    assert_eq!(manifest["policy_complexity"], 1);
    assert_eq!(manifest["master_seed"], 1);
    assert!(manifest.get("weights").is_none());

    let log: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("env.runlog.json")).unwrap()).unwrap();
    assert_eq!(log["flags"]["subcommand"], "gen");
    assert_eq!(log["flags"]["seed"], 1);
    assert_eq!(log["seeds"]["master_seed"], 1);
    assert_eq!(log["outputs"][0]["path"], "env.json");
}

#[test]
fn gen_is_reproducible_and_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&sme(p, &["gen", "--seed", "9", "--embed-weights", "--out", "a.json"])), 0);
    assert_eq!(code(&sme(p, &["gen", "--seed", "9", "--embed-weights", "--out", "b.json"])), 0);
    assert_eq!(std::fs::read(p.join("a.json")).unwrap(), std::fs::read(p.join("b.json")).unwrap());

    let out = sme(p, &["gen", "--k", "0", "--out", "bad.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("reward_interval"));
    assert!(!p.join("bad.json").exists());
    assert_eq!(code(&sme(p, &["gen", "--difficulty", "1.0", "--out", "bad.json"])), 1);
    assert_eq!(code(&sme(p, &["gen", "--n-state", "-3", "--out", "bad.json"])), 1);
    assert_eq!(code(&sme(p, &["frobnicate"])), 1);
}

#[test]
fn rollout_optimal_and_center() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_default(p);
    assert_eq!(code(&sme(p, &["rollout", "--env", "env.json", "--policy", "optimal", "--episodes", "5", "--out", "opt.csv"])), 0);
    let text = std::fs::read_to_string(p.join("opt.csv")).unwrap();
    assert!(text.starts_with("episode,return,length,mean_tilde_r"));
    assert_eq!(csv_column(&text, "return"), vec![100.0; 5]);

    assert_eq!(code(&sme(p, &["rollout", "--env", "env.json", "--policy", "center", "--episodes", "200", "--out", "c.csv"])), 0);
    let tilde = csv_column(&std::fs::read_to_string(p.join("c.csv")).unwrap(), "mean_tilde_r");
    let mean = tilde.iter().sum::<f64>() / tilde.len() as f64;
    assert!((mean - 0.75).abs() <= 0.01, "{mean}");
}

#[test]
fn rollout_noise_matches_behavior_level() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&sme(p, &["gen", "--seed", "0", "--out", "env.json"])), 0);
    assert_eq!(code(&sme(p, &["rollout", "--env", "env.json", "--policy", "noise:1.0", "--episodes", "100", "--out", "n.csv"])), 0);
    let tilde = csv_column(&std::fs::read_to_string(p.join("n.csv")).unwrap(), "mean_tilde_r");
    let mean = tilde.iter().sum::<f64>() / tilde.len() as f64;
    assert!((mean - 0.836).abs() <= 0.03, "{mean}");
}

#[test]
fn rollout_step_log_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_default(p);
    let args = ["rollout", "--env", "env.json", "--policy", "center", "--episodes", "2", "--out", "r.csv", "--steps-out", "s.csv", "--svg", "r.svg"];
    assert_eq!(code(&sme(p, &args)), 0);
    let steps = std::fs::read_to_string(p.join("s.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1 + 200);
    assert!(steps.lines().next().unwrap().starts_with("episode,t,s0,"));
    assert!(std::fs::read_to_string(p.join("r.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn runtime_and_input_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&sme(p, &["rollout", "--env", "missing.json", "--out", "x.csv"])), 2);
    std::fs::write(p.join("junk.json"), "{not json").unwrap();
    assert_eq!(code(&sme(p, &["rollout", "--env", "junk.json", "--out", "x.csv"])), 1);
    gen_default(p);
    assert_eq!(code(&sme(p, &["rollout", "--env", "env.json", "--policy", "noise:2", "--out", "x.csv"])), 1);
    assert_eq!(code(&sme(p, &["eval", "--env", "env.json", "--shells", "0.1,0.2", "--out", "x.csv"])), 1);
    let out = Command::new(env!("CARGO_BIN_EXE_sme"))
        .args(["gen", "--out", "t.json"])
        .current_dir(p)
        .env("SME_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_reports_six_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_default(p);
    let out = sme(p, &["eval", "--env", "env.json", "--policy", "optimal", "--n-per-shell", "500", "--out", "e.csv", "--svg", "e.svg"]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(p.join("e.csv")).unwrap();
    let (header, rows) = csv_rows(&csv);
    assert_eq!(header.len(), 8);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 8));
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["WD", "(0,0.2]", "(0.2,0.4]", "(0.4,0.6]", "(0.6,0.8]", "(0.8,1]"]);
    assert!(csv_column(&csv, "mean_tilde_r").iter().all(|&t| t == 1.0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("e.json")).unwrap()).unwrap();
    assert_eq!(report["categories"].as_array().unwrap().len(), 6);
}

#[test]
fn eval_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_default(p);
    for (threads, out) in [("1", "one.csv"), ("4", "four.csv")] {
        let status = Command::new(env!("CARGO_BIN_EXE_sme"))
            .args(["eval", "--env", "env.json", "--policy", "center", "--n-per-shell", "3000", "--out", out])
            .current_dir(p)
            .env("SME_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(p.join("one.csv")).unwrap(), std::fs::read(p.join("four.csv")).unwrap());
}

#[test]
fn dataset_without_noise_is_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_default(p);
    assert_eq!(code(&sme(p, &["dataset", "--env", "env.json", "--nu", "0", "--n", "50000", "--out", "d"])), 0);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(p.join("d.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_transitions"], 50_000);
    assert_eq!(manifest["mean_tilde_r"], 1.0);
    let bin = std::fs::metadata(p.join("d.bin")).unwrap().len();
    assert_eq!(bin, 12 + 50_000 * manifest["record_bytes"].as_u64().unwrap());
}

#[test]
fn concat_merges_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_default(p);
    assert_eq!(code(&sme(p, &["dataset", "--env", "env.json", "--nu", "0.5", "--n", "300", "--out", "a"])), 0);
    assert_eq!(code(&sme(p, &["dataset", "--env", "env.json", "--nu", "0.5", "--n", "200", "--out", "b"])), 0);
    assert_eq!(code(&sme(p, &["concat", "--inputs", "a.json", "b.json", "--out", "ab"])), 0);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(p.join("ab.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_transitions"], 500);
    assert_eq!(code(&sme(p, &["dataset", "--env", "env.json", "--nu", "0.1", "--n", "100", "--out", "c"])), 0);
    assert_eq!(code(&sme(p, &["concat", "--inputs", "a.json", "c.json", "--out", "ac"])), 1);
}

#[test]
fn verify_default_passes_and_corruption_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&sme(p, &["gen", "--out", "env.json"])), 0);
    let out = sme(p, &["verify", "--env", "env.json", "--out", "v.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("6/6 checks passed"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("v.json")).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 6);
    assert!(p.join("v.runlog.json").exists());

    let small = ["--transition-states", "20000", "--lipschitz-pairs", "2000", "--policy-states", "20000", "--collapse-states", "1000"];
    for corruption in ["non-stochastic-row", "sigmoid", "collapsed-policy"] {
        let mut args = vec!["verify", "--env", "env.json", "--corrupt", corruption];
        args.extend(small);
        assert_eq!(code(&sme(p, &args)), 3, "{corruption}");
    }
    assert!(p.join("env.verify.runlog.json").exists());
}
