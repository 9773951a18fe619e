//! `run`: executes every (policy, seed) pair and writes the artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gp_select::items::{load_itemset, synth_gp_itemset, write_itemset, FeedbackOracle, Format, ItemSet};
use gp_select::kernels::KernelCovariance;
use gp_select::oracles::{greedy_oracle, regret_curve, RegretInputs, RegretReport};
use gp_select::selection::{run_baseline, run_gp_select, RoundRecord, SelectionTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetConfig, ExperimentConfig, LazyMode, PolicyKind};

const ORACLE_SEED_MIX: u64 = 0xD1B5_4A32_D192_ED03;

pub struct Instance {
    pub items: ItemSet,
    pub oracle: FeedbackOracle,
}

/// One instance per seed; a fixed-seed or file dataset is shared, with a
/// noise stream per seed.
pub fn instances(config: &ExperimentConfig) -> Result<Vec<Instance>> {
    let wrap = |e: gp_select::Error| anyhow!("{e}");
    match &config.dataset {
        DatasetConfig::Synth { n, d, cost_range, seed } => config
            .seeds
            .iter()
            .map(|&s| {
                let (items, oracle) = synth_gp_itemset(
                    *n,
                    *d,
                    &config.kernel,
                    config.noise,
                    (cost_range[0], cost_range[1]),
                    seed.unwrap_or(s),
                )
                .map_err(wrap)
                .context("dataset")?;
                let oracle = oracle.reseeded(s ^ ORACLE_SEED_MIX);
                Ok(Instance { items, oracle })
            })
            .collect(),
        DatasetConfig::File { path, format } => {
            let format = format
                .or_else(|| Format::from_path(path))
                .with_context(|| format!("dataset.format: cannot infer from {}", path.display()))?;
            let data = load_itemset(path, format).map_err(wrap)?;
            let values = data.true_values.with_context(|| {
                format!("dataset.path: {} has no value column", path.display())
            })?;
            let base = FeedbackOracle::new(values, config.noise, 0).map_err(wrap)?;
            Ok(config
                .seeds
                .iter()
                .map(|&s| Instance {
                    items: data.items.clone(),
                    oracle: base.reseeded(s ^ ORACLE_SEED_MIX),
                })
                .collect())
        }
    }
}

/// SHA-256 over the CSV form (with true values) of the distinct instances.
pub fn dataset_hash(instances: &[Instance]) -> String {
    let mut hasher = Sha256::new();
    let mut last: Option<Vec<u8>> = None;
    for inst in instances {
        let mut buf = Vec::new();
        write_itemset(&mut buf, Format::Csv, &inst.items, Some(inst.oracle.true_values()))
            .expect("writing to memory");
        if last.as_ref() != Some(&buf) {
            hasher.update(&buf);
        }
        last = Some(buf);
    }
    hex::encode(hasher.finalize())
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(&serde_json::to_value(config).expect("serializable"))
        .expect("serializable");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Lazy,
    Naive,
    Baseline,
}

struct Job {
    kind: PolicyKind,
    seed_index: usize,
    variant: Variant,
}

struct Finished {
    label: String,
    seed: u64,
    variant: Variant,
    trace: SelectionTrace,
}

/// Seed-mean outcome of one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    /// Tradeoff weight, for GP-Select policies.
    pub lambda: Option<f64>,
    pub sum_f: f64,
    pub diversity: f64,
    pub cost: f64,
    pub rounds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedySummary {
    pub lambda: f64,
    pub sum_f: f64,
    pub diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sigma_n: f64,
    pub policies: Vec<PolicySummary>,
    #[serde(default)]
    pub greedy: Option<GreedySummary>,
    /// Whether lazy and naive runs picked the same items, when both ran.
    #[serde(default)]
    pub lazy_matches_naive: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

fn file_stem(label: &str) -> String {
    label.replace(':', "-")
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.is_empty() {
        f64::NAN
    } else if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn execute(config: &ExperimentConfig, instances: &[Instance], job: &Job) -> Result<Finished> {
    let inst = &instances[job.seed_index];
    let seed = config.seeds[job.seed_index];
    let mut oracle = inst.oracle.clone();
    let rule = job.kind.rule(config.policy.rule);
    let trace = match job.kind {
        PolicyKind::GpSelect(_) => {
            let pc = config.policy_config(rule, job.variant == Variant::Lazy);
            run_gp_select(&inst.items, &mut oracle, &config.kernel, &pc)
        }
        PolicyKind::Baseline(b) => {
            let pc = config.policy_config(rule, true);
            run_baseline(&inst.items, &mut oracle, &config.kernel, b, &pc, seed)
        }
    }
    .map_err(|e| anyhow!("{} seed {seed}: {e}", job.kind.label()))?;
    Ok(Finished {
        label: job.kind.label(),
        seed,
        variant: job.variant,
        trace,
    })
}

fn regret_for(config: &ExperimentConfig, inst: &Instance, trace: &SelectionTrace) -> Result<RegretReport> {
    let cov = KernelCovariance::new(&config.kernel, &inst.items).map_err(|e| anyhow!("{e}"))?;
    let costs = inst.items.costs();
    let inputs = RegretInputs {
        values: inst.oracle.true_values(),
        costs: &costs,
        covariance: Some(&cov),
        lambda: config.policy.lambda,
        sigma_n: Some(config.report_sigma_n()),
        resolution: config.resolution,
    };
    regret_curve(trace, config.regret_mode(), &inputs, &config.checkpoints()).map_err(|e| anyhow!("{e}"))
}

fn greedy_for(config: &ExperimentConfig, inst: &Instance) -> Result<GreedySummary> {
    let cov = KernelCovariance::new(&config.kernel, &inst.items).map_err(|e| anyhow!("{e}"))?;
    let costs = inst.items.costs();
    let uses_costs = config.policy.rule.uses_costs();
    let g = greedy_oracle(
        &cov,
        inst.oracle.true_values(),
        config.policy.lambda,
        config.report_sigma_n(),
        uses_costs.then_some(costs.as_slice()),
        config.budget,
    )
    .map_err(|e| anyhow!("{e}"))?;
    Ok(GreedySummary {
        lambda: config.policy.lambda,
        sum_f: g.value,
        diversity: g.diversity,
    })
}

/// Runs the experiment and returns the output directory.
pub fn run(config: &ExperimentConfig) -> Result<PathBuf> {
    let instances = instances(config)?;
    let kinds = config.policy_kinds();
    let mut jobs = Vec::new();
    for seed_index in 0..config.seeds.len() {
        for &kind in &kinds {
            let variants: &[Variant] = match (kind, config.lazy) {
                (PolicyKind::Baseline(_), _) => &[Variant::Baseline],
                (_, LazyMode::On) => &[Variant::Lazy],
                (_, LazyMode::Off) => &[Variant::Naive],
                (_, LazyMode::Both) => &[Variant::Lazy, Variant::Naive],
            };
            for &variant in variants {
                jobs.push(Job { kind, seed_index, variant });
            }
        }
    }
    let finished = jobs
        .par_iter()
        .map(|job| execute(config, &instances, job))
        .collect::<Result<Vec<_>>>()?;

    let out = &config.output_dir;
    let traces_dir = out.join("traces");
    std::fs::create_dir_all(&traces_dir)
        .with_context(|| format!("creating {}", traces_dir.display()))?;
    let mut artifacts = Vec::new();
    for f in &finished {
        let suffix = match (f.variant, config.lazy) {
            (Variant::Lazy, LazyMode::Both) => "_lazy",
            (Variant::Naive, LazyMode::Both) => "_naive",
            _ => "",
        };
        let name = format!("{}_seed{}{suffix}.jsonl", file_stem(&f.label), f.seed);
        let mut buf = Vec::new();
        for r in &f.trace.rounds {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        write_atomic(&traces_dir.join(&name), &buf)?;
        artifacts.push(format!("traces/{name}"));
    }

    // Lazy and naive runs select identically, so regret and summaries use
    // one variant per (policy, seed).
    let primary: Vec<&Finished> = finished
        .iter()
        .filter(|f| f.variant != Variant::Naive || config.lazy == LazyMode::Off)
        .collect();
    let lazy_matches_naive = (config.lazy == LazyMode::Both).then(|| {
        finished.iter().filter(|f| f.variant == Variant::Lazy).all(|l| {
            finished
                .iter()
                .find(|n| n.variant == Variant::Naive && n.label == l.label && n.seed == l.seed)
                .is_some_and(|n| n.trace.selected() == l.trace.selected())
        })
    });

    let mut csv = String::from("policy,seed,B,F_S,oracle,R_B,avg_regret\n");
    let mut means: BTreeMap<(usize, u64), Vec<[f64; 4]>> = BTreeMap::new();
    let order = |label: &str| kinds.iter().position(|k| k.label() == label).expect("known");
    for f in &primary {
        let idx = config.seeds.iter().position(|&s| s == f.seed).expect("known seed");
        let report = regret_for(config, &instances[idx], &f.trace)?;
        for (c, row) in report.rows.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.label, f.seed, row.budget, row.achieved, row.oracle, row.regret, row.average_regret
            ));
            means
                .entry((order(&f.label), c as u64))
                .or_default()
                .push([row.achieved, row.oracle, row.regret, row.average_regret]);
        }
    }
    let checkpoints = config.checkpoints();
    for ((k, c), rows) in &means {
        let m = |i: usize| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64;
        csv.push_str(&format!(
            "{},mean,{},{},{},{},{}\n",
            kinds[*k].label(),
            checkpoints[*c as usize],
            m(0),
            m(1),
            m(2),
            m(3)
        ));
    }
    write_atomic(&out.join("regret.csv"), csv.as_bytes())?;
    artifacts.push("regret.csv".into());

    let mut timing = String::from("policy,variant,seeds,rounds,updates,wall_ms,per_update_us\n");
    let mut groups: BTreeMap<(usize, Variant), Vec<&Finished>> = BTreeMap::new();
    for f in finished.iter().filter(|f| f.variant != Variant::Baseline) {
        groups.entry((order(&f.label), f.variant)).or_default().push(f);
    }
    for ((k, variant), runs) in &groups {
        // The first round pays for cold caches and is left out.
        fn steady(f: &Finished) -> impl Iterator<Item = &RoundRecord> {
            f.trace.rounds.iter().skip(1)
        }
        let wall = median(runs.iter().map(|f| steady(f).map(|r| r.wall_nanos as f64).sum::<f64>() / 1e6).collect());
        let updates = median(runs.iter().map(|f| steady(f).map(|r| r.recomputations as f64).sum()).collect());
        let rounds = median(runs.iter().map(|f| f.trace.rounds.len() as f64).collect());
        let per_update = median(
            runs.iter()
                .map(|f| {
                    let w: f64 = steady(f).map(|r| r.wall_nanos as f64).sum();
                    let u: f64 = steady(f).map(|r| r.recomputations as f64).sum();
                    if u > 0.0 { w / u / 1e3 } else { 0.0 }
                })
                .collect(),
        );
        timing.push_str(&format!(
            "{},{},{},{rounds},{updates},{wall:.3},{per_update:.4}\n",
            kinds[*k].label(),
            serde_json::to_value(variant)?.as_str().expect("string variant"),
            runs.len()
        ));
    }
    write_atomic(&out.join("timing.csv"), timing.as_bytes())?;
    artifacts.push("timing.csv".into());

    let sigma_n = config.report_sigma_n();
    let policies = kinds
        .iter()
        .map(|kind| {
            let runs: Vec<&&Finished> = primary.iter().filter(|f| f.label == kind.label()).collect();
            let mean = |g: &dyn Fn(&SelectionTrace) -> f64| {
                runs.iter().map(|f| g(&f.trace)).sum::<f64>() / runs.len() as f64
            };
            PolicySummary {
                policy: kind.label(),
                lambda: matches!(kind, PolicyKind::GpSelect(_)).then_some(config.policy.lambda),
                sum_f: mean(&|t| t.total_value().unwrap_or(f64::NAN)),
                diversity: mean(&|t| t.total_diversity().unwrap_or(f64::NAN)),
                cost: mean(&|t| t.total_cost()),
                rounds: mean(&|t| t.rounds.len() as f64),
            }
        })
        .collect();
    let greedy = if config.greedy_reference {
        let per: Vec<GreedySummary> = instances
            .par_iter()
            .map(|inst| greedy_for(config, inst))
            .collect::<Result<_>>()?;
        let k = per.len() as f64;
        Some(GreedySummary {
            lambda: config.policy.lambda,
            sum_f: per.iter().map(|g| g.sum_f).sum::<f64>() / k,
            diversity: per.iter().map(|g| g.diversity).sum::<f64>() / k,
        })
    } else {
        None
    };
    let summary = Summary {
        sigma_n,
        policies,
        greedy,
        lazy_matches_naive,
    };
    write_atomic(&out.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    artifacts.push("summary.json".into());

    artifacts.sort();
    let manifest = Manifest {
        tool: "gp-select".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(config),
        dataset_hash: dataset_hash(&instances),
        config: serde_json::to_value(config)?,
        artifacts,
    };
    write_atomic(&out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    if lazy_matches_naive == Some(false) {
        bail!("lazy and naive runs selected different items; see {}", out.display());
    }
    Ok(out.clone())
}
