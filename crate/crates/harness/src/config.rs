//! Experiment configuration: a TOML file plus dotted-key overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gp_select::items::Format;
use gp_select::kernels::KernelSpec;
use gp_select::oracles::RegretMode;
use gp_select::selection::{Baseline, BetaSchedule, PolicyConfig, Rule};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LazyMode {
    #[default]
    On,
    Off,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// GP-sampled utility over uniform random features. Without `seed`,
    /// every run seed draws its own instance.
    Synth {
        n: usize,
        d: usize,
        #[serde(default = "unit_costs")]
        cost_range: [f64; 2],
        #[serde(default)]
        seed: Option<u64>,
    },
    /// CSV or JSON item file with a `value` column. Relative paths are
    /// resolved against the config file's directory.
    File {
        path: PathBuf,
        #[serde(default)]
        format: Option<Format>,
    },
}

fn unit_costs() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub rule: Rule,
    #[serde(default)]
    pub lambda: f64,
    /// Diversity noise scale; `D(S)` is reported with `noise` when unset.
    #[serde(default)]
    pub sigma_n: Option<f64>,
}

fn default_resolution() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Rounds for uniform/diverse rules, cost units for cost rules.
    pub budget: f64,
    /// Regret checkpoints; defaults to `[budget]`.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    /// `gp_select`, `gp_select:<rule>`, `random`, `pure_explore`,
    /// `pure_exploit` or `epsilon_first:<fraction>`.
    pub policies: Vec<String>,
    /// Observation noise bound, also used as the model noise.
    pub noise: f64,
    #[serde(default)]
    pub lazy: LazyMode,
    #[serde(default)]
    pub failsafe_threshold: Option<usize>,
    /// Defaults to value regret for the uniform rule and greedy-relative
    /// regret otherwise.
    #[serde(default)]
    pub regret: Option<RegretMode>,
    /// Cost grid of the knapsack DP used for large cost-budget instances.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    /// Compute the known-utility greedy reference for each instance.
    #[serde(default = "default_true")]
    pub greedy_reference: bool,
    pub dataset: DatasetConfig,
    pub kernel: KernelSpec,
    pub policy: PolicySection,
    pub beta: BetaSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    GpSelect(Rule),
    Baseline(Baseline),
}

impl PolicyKind {
    pub fn parse(spec: &str, default_rule: Rule) -> Result<Self> {
        let (head, arg) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        Ok(match (head, arg) {
            ("gp_select", None) => PolicyKind::GpSelect(default_rule),
            ("gp_select", Some(rule)) => PolicyKind::GpSelect(
                [Rule::Uniform, Rule::Cost, Rule::Diverse, Rule::DiverseCost]
                    .into_iter()
                    .find(|r| r.name() == rule)
                    .with_context(|| format!("policies: unknown rule `{rule}` in `{spec}`"))?,
            ),
            ("random", None) => PolicyKind::Baseline(Baseline::Random),
            ("pure_explore", None) => PolicyKind::Baseline(Baseline::PureExplore),
            ("pure_exploit", None) => PolicyKind::Baseline(Baseline::PureExploit),
            ("epsilon_first", Some(f)) => PolicyKind::Baseline(Baseline::EpsilonFirst {
                fraction: f
                    .parse()
                    .with_context(|| format!("policies: bad fraction in `{spec}`"))?,
            }),
            _ => bail!("policies: unknown policy `{spec}`"),
        })
    }

    pub fn label(&self) -> String {
        match self {
            PolicyKind::GpSelect(rule) => format!("gp_select:{}", rule.name()),
            PolicyKind::Baseline(b) => b.name(),
        }
    }

    pub fn rule(&self, default_rule: Rule) -> Rule {
        match self {
            PolicyKind::GpSelect(rule) => *rule,
            PolicyKind::Baseline(_) => default_rule,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` and applies `key=value` overrides before validation.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetConfig::File { path: p, .. } = &mut config.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            bail!("policies: at least one policy is required");
        }
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            bail!("budget: must be positive, got {}", self.budget);
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            bail!("checkpoints: must be strictly ascending");
        }
        if let Some(c) = self.checkpoints.iter().find(|c| !(**c > 0.0 && **c <= self.budget)) {
            bail!("checkpoints: {c} is outside (0, budget]");
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            bail!("noise: must be positive, got {}", self.noise);
        }
        if let DatasetConfig::Synth { cost_range, d, .. } = &self.dataset {
            if !(cost_range[0] > 0.0 && cost_range[0] <= cost_range[1]) {
                bail!("dataset.cost_range: need 0 < min <= max");
            }
            self.kernel
                .validate(*d)
                .map_err(|e| anyhow::anyhow!("kernel: {e}"))?;
        }
        let mut seen = std::collections::HashSet::new();
        for spec in &self.policies {
            let kind = PolicyKind::parse(spec, self.policy.rule)?;
            if !seen.insert(kind.label()) {
                bail!("policies: `{spec}` is listed twice");
            }
            self.policy_config(kind.rule(self.policy.rule), true)
                .validate()
                .map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        if self.checkpoints.is_empty() {
            vec![self.budget]
        } else {
            self.checkpoints.clone()
        }
    }

    pub fn policy_kinds(&self) -> Vec<PolicyKind> {
        self.policies
            .iter()
            .map(|s| PolicyKind::parse(s, self.policy.rule).expect("validated"))
            .collect()
    }

    /// Diversity noise used for reporting `D(S)`.
    pub fn report_sigma_n(&self) -> f64 {
        self.policy.sigma_n.unwrap_or(self.noise)
    }

    pub fn policy_config(&self, rule: Rule, lazy: bool) -> PolicyConfig {
        let mut c = PolicyConfig::new(rule, self.beta, self.budget, self.noise);
        c.lambda = self.policy.lambda;
        c.sigma_n = Some(self.report_sigma_n());
        c.lazy = lazy;
        c.failsafe_threshold = self.failsafe_threshold;
        c
    }

    pub fn regret_mode(&self) -> RegretMode {
        self.regret.unwrap_or(if self.policy.rule == Rule::Uniform {
            RegretMode::Value
        } else {
            RegretMode::GreedyRelative
        })
    }
}

/// Sets a dotted key such as `policy.lambda=0.5`. The value is parsed as a
/// TOML value and kept as a string when that fails.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not key=value"))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{p}` is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
