use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gp_select_harness::compare::{to_csv, tradeoff_table};
use gp_select_harness::experiment::Summary;
use gp_select_harness::{run, ExperimentConfig};

const BASE: &str = r#"
output_dir = "out"
seeds = [0, 1, 2]
budget = 20
checkpoints = [5, 20]
policies = ["random", "gp_select"]
noise = 0.1

[dataset]
source = "synth"
n = 50
d = 2

[kernel]
type = "rbf"
bandwidth = 0.3

[policy]
rule = "uniform"

[beta]
mode = "constant"
value = 4.0
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn load(dir: &Path, overrides: &[&str]) -> ExperimentConfig {
    let path = write_config(dir, BASE);
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(&path, &overrides).unwrap()
}

fn item_sequence(path: &Path) -> Vec<u64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["item"].as_u64().unwrap())
        .collect()
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_one_trace_per_policy_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&load(tmp.path(), &[])).unwrap();
    let traces: Vec<_> = fs::read_dir(out.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 6);
    for name in ["random_seed0.jsonl", "gp_select-uniform_seed2.jsonl"] {
        assert_eq!(item_sequence(&out.join("traces").join(name)).len(), 20);
    }

    let regret = fs::read_to_string(out.join("regret.csv")).unwrap();
    let mut lines = regret.lines();
    assert_eq!(lines.next(), Some("policy,seed,B,F_S,oracle,R_B,avg_regret"));
    // 2 policies x (3 seeds + mean) x 2 checkpoints
    assert_eq!(lines.count(), 16);
    for name in ["timing.csv", "summary.json", "manifest.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = load(tmp.path(), &[]);
    let out = run(&config).unwrap();
    let first: Vec<Vec<u8>> = ["regret.csv", "summary.json", "manifest.json"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    run(&config).unwrap();
    for (f, bytes) in ["regret.csv", "summary.json", "manifest.json"].iter().zip(first) {
        assert_eq!(fs::read(out.join(f)).unwrap(), bytes, "{f} changed between runs");
    }
}

#[test]
fn lazy_and_naive_select_the_same_items() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&load(tmp.path(), &["lazy=\"both\"", "policies=[\"gp_select\"]"])).unwrap();
    for seed in 0..3 {
        let lazy = item_sequence(&out.join(format!("traces/gp_select-uniform_seed{seed}_lazy.jsonl")));
        let naive = item_sequence(&out.join(format!("traces/gp_select-uniform_seed{seed}_naive.jsonl")));
        assert_eq!(lazy, naive);
    }
    assert_eq!(summary(&out).lazy_matches_naive, Some(true));
    let timing = fs::read_to_string(out.join("timing.csv")).unwrap();
    assert!(timing.contains(",lazy,") && timing.contains(",naive,"));
}

#[test]
fn overrides_replace_nested_and_top_level_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let config = load(
        tmp.path(),
        &["policy.lambda=0.25", "budget=7", "checkpoints=[7]", "dataset.seed=9"],
    );
    assert_eq!(config.policy.lambda, 0.25);
    assert_eq!(config.budget, 7.0);
    assert_eq!(config.checkpoints(), vec![7.0]);
    assert!(matches!(
        config.dataset,
        gp_select_harness::config::DatasetConfig::Synth { seed: Some(9), .. }
    ));
    assert_eq!(config.output_dir, tmp.path().join("out"));
}

#[test]
fn invalid_configs_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), BASE);
    let cases = [
        ("budget=0", "budget"),
        ("kernel.bandwidth=-1", "bandwidth"),
        ("kernel.bandwith=1", "bandwith"),
        ("policies=[\"gp_select\", \"oracle\"]", "policies"),
        ("checkpoints=[30]", "checkpoints"),
        ("policy.lambda=2", "lambda"),
        ("seeds=[]", "seeds"),
    ];
    for (o, field) in cases {
        let err = ExperimentConfig::load(&path, &[o.to_string()]).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains(field), "`{o}` gave `{msg}`");
    }
}

fn lambda_grid(tmp: &Path) -> Vec<PathBuf> {
    [0.0, 0.1, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|l| {
            let config = load(
                tmp,
                &[
                    "policy.rule=\"diverse\"",
                    "policies=[\"gp_select\"]",
                    "seeds=[0]",
                    "dataset.seed=5",
                    "checkpoints=[]",
                    &format!("policy.lambda={l}"),
                    &format!("output_dir=\"lambda_{l}\""),
                ],
            );
            run(&config).unwrap()
        })
        .collect()
}

#[test]
fn compare_tabulates_the_lambda_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = lambda_grid(tmp.path());
    let rows = tradeoff_table(&dirs).unwrap();
    let runs: Vec<_> = rows.iter().filter(|r| r.policy != "greedy").collect();
    let greedy: Vec<_> = rows.iter().filter(|r| r.policy == "greedy").collect();
    assert_eq!(runs.len(), 6);
    assert_eq!(greedy.len(), 6);

    // D(S) is reported even when the policy ignores it.
    assert!(runs[0].lambda == Some(0.0) && runs[0].diversity > 0.0);
    let top = runs.iter().map(|r| r.diversity).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(runs.last().unwrap().diversity, top);

    let csv = to_csv(&rows);
    assert!(csv.starts_with("source,policy,lambda,sum_f,diversity\n"));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn compare_rejects_runs_on_different_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(&load(tmp.path(), &["output_dir=\"a\""])).unwrap();
    let b = run(&load(tmp.path(), &["output_dir=\"b\"", "dataset.n=60"])).unwrap();
    let err = tradeoff_table(&[a, b]).unwrap_err();
    assert!(err.to_string().contains("different datasets"), "{err}");
}

#[test]
fn binary_runs_and_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), BASE);
    let bin = env!("CARGO_BIN_EXE_gp-select");

    let output = Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .args(["--override", "seeds=[4]", "--lazy", "both"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(tmp.path().join("out/traces/gp_select-uniform_seed4_naive.jsonl").is_file());

    let table = tmp.path().join("table.csv");
    let output = Command::new(bin)
        .args(["compare", "--inputs"])
        .arg(tmp.path().join("out"))
        .arg("--out")
        .arg(&table)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("gp_select:uniform"));
    assert!(fs::read_to_string(&table).unwrap().lines().count() >= 3);

    let output = Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .args(["--override", "noise=-1"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("noise"));
}
