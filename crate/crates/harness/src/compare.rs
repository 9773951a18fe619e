//! `compare`: value/diversity table across runs on one dataset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::experiment::{Manifest, Summary};

#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffRow {
    /// Run directory name, or `greedy` for the known-utility reference.
    pub source: String,
    pub policy: String,
    pub lambda: Option<f64>,
    pub sum_f: f64,
    pub diversity: f64,
}

fn run_dir(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.to_path_buf()
    } else {
        input.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// One row per (run, policy), then one greedy row per distinct λ, sorted by λ.
pub fn tradeoff_table(inputs: &[PathBuf]) -> Result<Vec<TradeoffRow>> {
    if inputs.is_empty() {
        bail!("inputs: at least one run directory is required");
    }
    let mut rows = Vec::new();
    let mut greedy: Vec<TradeoffRow> = Vec::new();
    let mut hash: Option<(String, PathBuf)> = None;
    for input in inputs {
        let dir = run_dir(input);
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        match &hash {
            None => hash = Some((manifest.dataset_hash.clone(), dir.clone())),
            Some((h, first)) if *h != manifest.dataset_hash => bail!(
                "inputs: {} and {} were run on different datasets",
                first.display(),
                dir.display()
            ),
            Some(_) => {}
        }
        let summary: Summary = read_json(&dir.join("summary.json"))?;
        let source = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        for p in summary.policies {
            rows.push(TradeoffRow {
                source: source.clone(),
                policy: p.policy,
                lambda: p.lambda,
                sum_f: p.sum_f,
                diversity: p.diversity,
            });
        }
        if let Some(g) = summary.greedy {
            if !greedy.iter().any(|r| r.lambda == Some(g.lambda)) {
                greedy.push(TradeoffRow {
                    source: "greedy".into(),
                    policy: "greedy".into(),
                    lambda: Some(g.lambda),
                    sum_f: g.sum_f,
                    diversity: g.diversity,
                });
            }
        }
    }
    greedy.sort_by(|a, b| a.lambda.unwrap_or(0.0).total_cmp(&b.lambda.unwrap_or(0.0)));
    rows.extend(greedy);
    Ok(rows)
}

pub fn to_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from("source,policy,lambda,sum_f,diversity\n");
    for r in rows {
        let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{lambda},{},{}\n",
            r.source, r.policy, r.sum_f, r.diversity
        ));
    }
    out
}

pub fn to_table(rows: &[TradeoffRow]) -> String {
    let mut out = format!(
        "{:<24} {:<24} {:>9} {:>12} {:>12}\n",
        "source", "policy", "lambda", "sum_f", "D(S)"
    );
    for r in rows {
        let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<24} {:<24} {:>9} {:>12.4} {:>12.4}\n",
            r.source, r.policy, lambda, r.sum_f, r.diversity
        ));
    }
    out
}
