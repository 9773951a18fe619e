//! Ground set, per-item costs and the simulated feedback oracle.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec};

/// Ground sets up to this size get an exact multivariate normal draw in
/// [`synth_gp_itemset`]; larger ones use a weight-space sampler.
pub const EXACT_SAMPLING_LIMIT: usize = 2500;

/// Random Fourier features used for large RBF draws.
const FOURIER_FEATURES: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub features: Vec<f64>,
    pub cost: f64,
}

/// Validated ground set: non-empty, contiguous ids, shared dimension,
/// strictly positive costs.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemSet {
    items: Vec<Item>,
    dim: usize,
    budget_default: f64,
}

impl ItemSet {
    pub fn new(items: Vec<Item>, budget_default: f64) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::validation("items", "item set is empty"));
        };
        let dim = first.features.len();
        for (pos, item) in items.iter().enumerate() {
            if item.id != pos {
                return Err(Error::validation(
                    "id",
                    format!("expected contiguous id {pos}, found {}", item.id),
                ));
            }
            if item.features.len() != dim {
                return Err(Error::validation(
                    "features",
                    format!(
                        "item {pos} has dimension {}, expected {dim}",
                        item.features.len()
                    ),
                ));
            }
            if !(item.cost > 0.0 && item.cost.is_finite()) {
                return Err(Error::validation(
                    "cost",
                    format!("item {pos} has non-positive cost {}", item.cost),
                ));
            }
            if item.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(
                    "features",
                    format!("item {pos} has a non-finite feature"),
                ));
            }
        }
        if !(budget_default > 0.0) {
            return Err(Error::validation("budget", "default budget must be positive"));
        }
        Ok(ItemSet {
            items,
            dim,
            budget_default,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn features(&self, id: usize) -> &[f64] {
        &self.items[id].features
    }

    pub fn cost(&self, id: usize) -> f64 {
        self.items[id].cost
    }

    pub fn costs(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.cost).collect()
    }

    pub fn budget_default(&self) -> f64 {
        self.budget_default
    }

    pub fn has_uniform_costs(&self) -> bool {
        let c = self.items[0].cost;
        self.items.iter().all(|i| i.cost == c)
    }
}

/// Hidden utility plus bounded observation noise.
///
/// Noise is a zero-mean Gaussian with standard deviation `noise_bound / 2`
/// truncated to `[-noise_bound, noise_bound]`, drawn i.i.d. per query from
/// a single seeded stream.
#[derive(Clone, Debug)]
pub struct FeedbackOracle {
    true_values: Vec<f64>,
    noise_bound: f64,
    seed: u64,
    rng: ChaCha8Rng,
    queries: u64,
}

impl FeedbackOracle {
    pub fn new(true_values: Vec<f64>, noise_bound: f64, seed: u64) -> Result<Self> {
        if let Some(v) = true_values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::validation(
                "value",
                format!("true values must be finite and non-negative, got {v}"),
            ));
        }
        if !(noise_bound >= 0.0 && noise_bound.is_finite()) {
            return Err(Error::validation(
                "noise_bound",
                format!("must be non-negative, got {noise_bound}"),
            ));
        }
        Ok(FeedbackOracle {
            true_values,
            noise_bound,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queries: 0,
        })
    }

    /// Same values and noise level with a fresh noise stream.
    pub fn reseeded(&self, seed: u64) -> Self {
        FeedbackOracle {
            true_values: self.true_values.clone(),
            noise_bound: self.noise_bound,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queries: 0,
        }
    }

    /// Noisy observation `f(id) + ε`.
    pub fn query(&mut self, id: usize) -> Result<f64> {
        let f = *self.true_values.get(id).ok_or(Error::Index {
            index: id,
            len: self.true_values.len(),
        })?;
        self.queries += 1;
        Ok(f + self.sample_noise())
    }

    fn sample_noise(&mut self) -> f64 {
        if self.noise_bound == 0.0 {
            return 0.0;
        }
        let sd = self.noise_bound / 2.0;
        loop {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let eps = z * sd;
            if eps.abs() <= self.noise_bound {
                return eps;
            }
        }
    }

    pub fn true_value(&self, id: usize) -> f64 {
        self.true_values[id]
    }

    pub fn true_values(&self) -> &[f64] {
        &self.true_values
    }

    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn len(&self) -> usize {
        self.true_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

/// Items read from disk, with the hidden value column when present.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: ItemSet,
    pub true_values: Option<Vec<f64>>,
}

impl Dataset {
    /// Feedback oracle over the value column, if the file had one.
    pub fn oracle(&self, noise_bound: f64, seed: u64) -> Option<Result<FeedbackOracle>> {
        self.true_values
            .as_ref()
            .map(|v| FeedbackOracle::new(v.clone(), noise_bound, seed))
    }
}

struct Row {
    line: usize,
    id: i64,
    features: Vec<f64>,
    cost: f64,
    value: Option<f64>,
}

/// Column positions recovered from a header.
struct Layout {
    id: usize,
    features: Vec<usize>,
    cost: usize,
    value: Option<usize>,
}

impl Layout {
    fn from_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut id = None;
        let mut cost = None;
        let mut value = None;
        let mut features: Vec<(usize, usize)> = Vec::new();
        for (col, name) in names.enumerate() {
            let name = name.trim();
            match name {
                "id" => id = Some(col),
                "cost" => cost = Some(col),
                "value" => value = Some(col),
                _ => match name.strip_prefix('f').and_then(|k| k.parse::<usize>().ok()) {
                    Some(k) if k >= 1 => features.push((k, col)),
                    _ => {
                        return Err(Error::Parse {
                            row: 0,
                            message: format!("unknown column {name:?}"),
                        })
                    }
                },
            }
        }
        features.sort_unstable();
        for (expected, (k, _)) in features.iter().enumerate() {
            if *k != expected + 1 {
                return Err(Error::Parse {
                    row: 0,
                    message: format!("feature columns must be f1..fd, missing f{}", expected + 1),
                });
            }
        }
        let missing = |what: &str| Error::Parse {
            row: 0,
            message: format!("missing {what} column"),
        };
        if features.is_empty() {
            return Err(missing("feature"));
        }
        Ok(Layout {
            id: id.ok_or_else(|| missing("id"))?,
            cost: cost.ok_or_else(|| missing("cost"))?,
            value,
            features: features.into_iter().map(|(_, c)| c).collect(),
        })
    }
}

fn parse_number(field: Option<&str>, line: usize, name: &str) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Parse {
        row: line,
        message: format!("missing {name}"),
    })?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row: line,
        message: format!("{name}: cannot parse {raw:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row: line,
            message: format!("{name}: non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

fn parse_id(field: Option<&str>, line: usize) -> Result<i64> {
    let raw = field.ok_or_else(|| Error::Parse {
        row: line,
        message: "missing id".into(),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        row: line,
        message: format!("id: cannot parse {raw:?} as an integer"),
    })
}

fn rows_to_dataset(mut rows: Vec<Row>) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::validation("items", "file contains no rows"));
    }
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.id) {
            return Err(Error::Parse {
                row: r.line,
                message: format!("duplicate id {}", r.id),
            });
        }
        if !(r.cost > 0.0) {
            return Err(Error::validation(
                "cost",
                format!("row {}: cost must be positive, got {}", r.line, r.cost),
            ));
        }
    }
    let has_value = rows[0].value.is_some();
    if rows.iter().any(|r| r.value.is_some() != has_value) {
        return Err(Error::validation("value", "value column only partially filled"));
    }
    rows.sort_by_key(|r| r.id);
    let true_values = has_value.then(|| rows.iter().map(|r| r.value.unwrap()).collect::<Vec<_>>());
    let items: Vec<Item> = rows
        .into_iter()
        .enumerate()
        .map(|(id, r)| Item {
            id,
            features: r.features,
            cost: r.cost,
        })
        .collect();
    let budget = items.iter().map(|i| i.cost).sum();
    Ok(Dataset {
        items: ItemSet::new(items, budget)?,
        true_values,
    })
}

/// Parses `id,f1..fd,cost[,value]` CSV. Rows are re-indexed `0..n` in
/// ascending order of their original id.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 0,
        message: e.to_string(),
    })?;
    let layout = Layout::from_names(header.iter())?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        let features = layout
            .features
            .iter()
            .enumerate()
            .map(|(f, &c)| parse_number(rec.get(c), line, &format!("f{}", f + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            line,
            id: parse_id(rec.get(layout.id), line)?,
            features,
            cost: parse_number(rec.get(layout.cost), line, "cost")?,
            value: layout
                .value
                .map(|c| parse_number(rec.get(c), line, "value"))
                .transpose()?,
        });
    }
    rows_to_dataset(rows)
}

/// Parses a JSON array of objects keyed like the CSV header.
pub fn read_json<R: Read>(reader: R) -> Result<Dataset> {
    let value: serde_json::Value = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        row: e.line(),
        message: e.to_string(),
    })?;
    let array = value.as_array().ok_or_else(|| Error::Parse {
        row: 0,
        message: "expected a JSON array of objects".into(),
    })?;
    let mut rows = Vec::new();
    let mut layout: Option<Layout> = None;
    for (k, entry) in array.iter().enumerate() {
        let line = k + 1;
        let obj = entry.as_object().ok_or_else(|| Error::Parse {
            row: line,
            message: "expected an object".into(),
        })?;
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        let this = Layout::from_names(keys.iter().copied()).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { row: line, message },
            other => other,
        })?;
        if let Some(first) = &layout {
            if first.features.len() != this.features.len() {
                return Err(Error::validation(
                    "features",
                    format!(
                        "row {line} has dimension {}, expected {}",
                        this.features.len(),
                        first.features.len()
                    ),
                ));
            }
        }
        let text = |key: &str| -> Option<String> {
            obj.get(key).map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
        };
        let features = (1..=this.features.len())
            .map(|f| {
                let key = format!("f{f}");
                parse_number(text(&key).as_deref(), line, &key)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            line,
            id: parse_id(text("id").as_deref(), line)?,
            features,
            cost: parse_number(text("cost").as_deref(), line, "cost")?,
            value: this
                .value
                .map(|_| parse_number(text("value").as_deref(), line, "value"))
                .transpose()?,
        });
        layout.get_or_insert(this);
    }
    rows_to_dataset(rows)
}

pub fn load_itemset(path: &Path, format: Format) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    match format {
        Format::Csv => read_csv(reader),
        Format::Json => read_json(reader),
    }
}

/// Writes items (and optionally true values) in the same schema that
/// [`load_itemset`] reads. Numbers use the shortest round-trip form.
pub fn write_itemset<W: Write>(
    mut out: W,
    format: Format,
    items: &ItemSet,
    true_values: Option<&[f64]>,
) -> std::io::Result<()> {
    let d = items.dim();
    match format {
        Format::Csv => {
            let mut header = vec!["id".to_string()];
            header.extend((1..=d).map(|k| format!("f{k}")));
            header.push("cost".into());
            if true_values.is_some() {
                header.push("value".into());
            }
            writeln!(out, "{}", header.join(","))?;
            for item in items.items() {
                let mut fields = vec![item.id.to_string()];
                fields.extend(item.features.iter().map(f64::to_string));
                fields.push(item.cost.to_string());
                if let Some(v) = true_values {
                    fields.push(v[item.id].to_string());
                }
                writeln!(out, "{}", fields.join(","))?;
            }
        }
        Format::Json => {
            let rows: Vec<serde_json::Value> = items
                .items()
                .iter()
                .map(|item| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("id".into(), item.id.into());
                    for (k, x) in item.features.iter().enumerate() {
                        obj.insert(format!("f{}", k + 1), (*x).into());
                    }
                    obj.insert("cost".into(), item.cost.into());
                    if let Some(v) = true_values {
                        obj.insert("value".into(), v[item.id].into());
                    }
                    serde_json::Value::Object(obj)
                })
                .collect();
            serde_json::to_writer(&mut out, &rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn save_itemset(
    path: &Path,
    format: Format,
    items: &ItemSet,
    true_values: Option<&[f64]>,
) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    write_itemset(&mut out, format, items, true_values).map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// One draw from `N(0, K + jitter I)`.
///
/// Jitter starts at `1e-10 · trace(K) / n` and grows tenfold for up to
/// three retries when the Cholesky factorization is refused.
pub fn sample_gp_values<R: Rng + ?Sized>(gram: &GramMatrix, rng: &mut R) -> Result<Vec<f64>> {
    let n = gram.n();
    let trace: f64 = (0..n).map(|i| gram.matrix()[(i, i)]).sum();
    let mut jitter = (1e-10 * trace / n as f64).max(1e-300);
    let mut factor = None;
    for _ in 0..4 {
        let shifted = gram.matrix() + DMatrix::identity(n, n) * jitter;
        if let Some(chol) = shifted.cholesky() {
            factor = Some(chol.unpack());
            break;
        }
        jitter *= 10.0;
    }
    let l = factor.ok_or_else(|| {
        Error::Numerical(format!("Gram matrix not positive definite after jitter {jitter:e}"))
    })?;
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    Ok((l * z).iter().copied().collect())
}

fn weight_space_values<R: Rng + ?Sized>(
    kernel: &KernelSpec,
    features: &[Vec<f64>],
    d: usize,
    rng: &mut R,
) -> Vec<f64> {
    match *kernel {
        KernelSpec::Linear | KernelSpec::KroneckerLinear { .. } => {
            let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            features
                .iter()
                .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum())
                .collect()
        }
        KernelSpec::Rbf { bandwidth } => {
            let freq = Normal::new(0.0, 1.0 / bandwidth).expect("positive bandwidth");
            let omegas: Vec<Vec<f64>> = (0..FOURIER_FEATURES)
                .map(|_| (0..d).map(|_| freq.sample(rng)).collect())
                .collect();
            let phases: Vec<f64> = (0..FOURIER_FEATURES)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let weights: Vec<f64> = (0..FOURIER_FEATURES)
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let scale = (2.0 / FOURIER_FEATURES as f64).sqrt();
            features
                .iter()
                .map(|x| {
                    let s: f64 = omegas
                        .iter()
                        .zip(&phases)
                        .zip(&weights)
                        .map(|((om, b), a)| {
                            let proj: f64 = om.iter().zip(x).map(|(o, xi)| o * xi).sum();
                            a * (proj + b).cos()
                        })
                        .sum();
                    scale * s
                })
                .collect()
        }
    }
}

/// Synthetic ground set with a GP-sampled utility.
///
/// Features are uniform on `[0,1]^d`; values are a single prior draw
/// shifted so the minimum is zero; costs are uniform on `cost_range`.
/// Above [`EXACT_SAMPLING_LIMIT`] items, linear kernels are sampled exactly
/// in weight space and RBF kernels through random Fourier features.
pub fn synth_gp_itemset(
    n: usize,
    d: usize,
    kernel: &KernelSpec,
    noise_bound: f64,
    cost_range: (f64, f64),
    seed: u64,
) -> Result<(ItemSet, FeedbackOracle)> {
    if n == 0 || d == 0 {
        return Err(Error::validation("n/d", "need at least one item and one dimension"));
    }
    let (c_min, c_max) = cost_range;
    if !(c_min > 0.0 && c_min <= c_max && c_max.is_finite()) {
        return Err(Error::validation(
            "cost_range",
            format!("need 0 < c_min <= c_max, got [{c_min}, {c_max}]"),
        ));
    }
    kernel.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let placeholder: Vec<Item> = features
        .iter()
        .enumerate()
        .map(|(id, f)| Item {
            id,
            features: f.clone(),
            cost: 1.0,
        })
        .collect();
    let mut values = if n <= EXACT_SAMPLING_LIMIT {
        let probe = ItemSet::new(placeholder, 1.0)?;
        sample_gp_values(&gram(kernel, &probe)?, &mut rng)?
    } else {
        weight_space_values(kernel, &features, d, &mut rng)
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    for v in &mut values {
        *v = (*v - min).max(0.0);
    }
    let items: Vec<Item> = features
        .into_iter()
        .enumerate()
        .map(|(id, features)| Item {
            id,
            features,
            cost: if c_min == c_max {
                c_min
            } else {
                rng.random_range(c_min..=c_max)
            },
        })
        .collect();
    let budget = items.iter().map(|i| i.cost).sum();
    let oracle_seed = seed ^ 0x9E37_79B9_7F4A_7C15;
    Ok((
        ItemSet::new(items, budget)?,
        FeedbackOracle::new(values, noise_bound, oracle_seed)?,
    ))
}
