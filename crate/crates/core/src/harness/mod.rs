//! Monte Carlo experiments: grids of populations crossed with methods,
//! replicate-parallel and deterministic in the master seed.

pub mod io;
pub mod reproduce;
pub mod ttest;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bets::BetRule;
use crate::error::{Error, Result};
use crate::geometry::NullSpec;
use crate::audit::AuditSetup;
use crate::methods::{decide, run, MethodConfig, Stopping, Strategy, UitsResult};
use crate::population::{make_population, Generator, StratifiedPopulation, StreamSet};

pub use ttest::{level_study, stratified_t_test, LevelConfig, LevelRow};

fn half() -> f64 {
    0.5
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationCell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub generator: Generator,
    pub sizes: Vec<usize>,
}

impl PopulationCell {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let fmt = |v: &[f64]| v.iter().map(|m| format!("{m}")).collect::<Vec<_>>().join(";");
        match &self.generator {
            Generator::PointMass { means } => format!("point_mass[{}]", fmt(means)),
            Generator::Bernoulli { p } => format!("bernoulli[{}]", fmt(p)),
            Generator::TruncatedGaussian { means, sd } => {
                format!("truncated_gaussian[{}]sd={sd}", fmt(means))
            }
        }
    }

    /// Weighted mean of the nominal stratum means.
    pub fn nominal_mean(&self) -> f64 {
        let n: usize = self.sizes.iter().sum();
        self.generator
            .nominal_means()
            .iter()
            .zip(&self.sizes)
            .map(|(m, s)| m * *s as f64 / n as f64)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFamily {
    PointMass,
    Bernoulli,
    TruncatedGaussian,
}

/// Two-stratum populations with stratum means `[μ − gap/2, μ + gap/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationGrid {
    pub family: GridFamily,
    pub means: Vec<f64>,
    pub gaps: Vec<f64>,
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub sd: Vec<f64>,
}

/// `from, from + step, …` up to `to` inclusive, rounded to clean decimals.
pub fn grid_points(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((from + i as f64 * step) * 1e9).round() / 1e9).collect()
}

impl PopulationGrid {
    pub fn expand(&self) -> Result<Vec<PopulationCell>> {
        if self.sizes.len() != 2 {
            return Err(Error::InvalidSpec("population grids have two strata".into()));
        }
        let sds: Vec<Option<f64>> = match self.family {
            GridFamily::TruncatedGaussian if self.sd.is_empty() => {
                return Err(Error::InvalidSpec("truncated Gaussian grids need sd values".into()))
            }
            GridFamily::TruncatedGaussian => self.sd.iter().map(|s| Some(*s)).collect(),
            _ => vec![None],
        };
        let mut cells = Vec::new();
        for sd in &sds {
            for &gap in &self.gaps {
                for &mu in &self.means {
                    let round = |x: f64| (x * 1e9).round() / 1e9;
                    let means = vec![round(mu - gap / 2.0), round(mu + gap / 2.0)];
                    let generator = match (self.family, sd) {
                        (GridFamily::PointMass, _) => Generator::PointMass { means },
                        (GridFamily::Bernoulli, _) => Generator::Bernoulli { p: means },
                        (GridFamily::TruncatedGaussian, Some(sd)) => {
                            Generator::TruncatedGaussian { means, sd: *sd }
                        }
                        (GridFamily::TruncatedGaussian, None) => unreachable!(),
                    };
                    cells.push(PopulationCell { label: None, generator, sizes: self.sizes.clone() });
                }
            }
        }
        Ok(cells)
    }
}

/// A method in an experiment. `pooled` runs it unstratified on the pooled
/// population, as a single stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    #[serde(flatten)]
    pub config: MethodConfig,
    #[serde(default)]
    pub pooled: bool,
}

impl MethodEntry {
    pub fn label(&self) -> String {
        if self.pooled {
            format!("unstratified/{}", self.config.bets.name())
        } else {
            self.config.label()
        }
    }
}

impl From<MethodConfig> for MethodEntry {
    fn from(config: MethodConfig) -> Self {
        Self { config, pooled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "half")]
    pub eta0: f64,
    #[serde(default)]
    pub populations: Vec<PopulationCell>,
    #[serde(default)]
    pub grids: Vec<PopulationGrid>,
    pub methods: Vec<MethodEntry>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cap for methods that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

impl ExperimentConfig {
    pub fn cells(&self) -> Result<Vec<PopulationCell>> {
        let mut cells = self.populations.clone();
        for g in &self.grids {
            cells.extend(g.expand()?);
        }
        Ok(cells)
    }

    /// SHA-256 of the JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One replicate of one (population, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub population: usize,
    pub population_label: String,
    pub mean: f64,
    pub method: usize,
    pub method_label: String,
    pub replicate: usize,
    pub tau: usize,
    pub n_tau: usize,
    pub rejected: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub population: usize,
    pub population_label: String,
    pub mean: f64,
    pub method: usize,
    pub method_label: String,
    pub replicates: usize,
    pub errors: usize,
    pub mean_n_tau: f64,
    pub sd_n_tau: f64,
    pub se_n_tau: f64,
    pub q10_n_tau: f64,
    pub median_n_tau: f64,
    pub q90_n_tau: f64,
    pub mean_tau: f64,
    pub stop_probability: f64,
    /// Some runs hit the cap, so the mean understates the expected size.
    pub censored: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub raw: Vec<RawRow>,
    pub aggregates: Vec<Aggregate>,
    /// Seconds per raw row, in the same order.
    pub runtimes: Vec<f64>,
}

/// Master seed for one population cell.
pub fn cell_seed(master: u64, population: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ (population as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn prepare(entry: &MethodEntry, pop: &StratifiedPopulation, default_cap: Option<usize>) -> MethodConfig {
    let mut cfg = entry.config.clone();
    if let BetRule::Kelly { means, .. } = &mut cfg.bets {
        if means.is_empty() {
            *means = if entry.pooled { vec![pop.mean()] } else { pop.stratum_means() };
        }
    }
    if cfg.cap.is_none() {
        cfg.cap = default_cap;
    }
    if entry.pooled {
        cfg.strategy = Strategy::BruteForce;
        cfg.support = None;
        cfg.g = None;
    } else if cfg.strategy == Strategy::BruteForce && cfg.support.is_none() && cfg.nulls.is_none() {
        cfg.support = Some(pop.distinct_values());
    }
    cfg
}

/// Runs one method on one population replicate.
pub fn run_one(
    entry: &MethodEntry,
    pop: &StratifiedPopulation,
    eta0: f64,
    default_cap: Option<usize>,
    seed: u64,
    replicate: u64,
) -> Result<Stopping> {
    let mut cfg = prepare(entry, pop, default_cap);
    if entry.pooled {
        let pooled = StratifiedPopulation::new(vec![(0..pop.k())
            .flat_map(|k| pop.stratum(k).iter().copied())
            .collect()])?;
        cfg.nulls = Some(vec![vec![eta0]]);
        let spec = NullSpec::new(vec![1.0], eta0)?;
        let mut src = StreamSet::new(&pooled, cfg.mode, seed, replicate);
        return decide(&cfg, &spec, &pooled.sizes(), &mut src);
    }
    let spec = NullSpec::from_sizes(&pop.sizes(), eta0)?;
    let mut src = StreamSet::new(pop, cfg.mode, seed, replicate);
    decide(&cfg, &spec, &pop.sizes(), &mut src)
}

/// One replicate with its full trajectory, and the audit setup that replays
/// it. Unstratified entries have no stratified replay and are refused.
pub fn trace_one(
    entry: &MethodEntry,
    pop: &StratifiedPopulation,
    eta0: f64,
    default_cap: Option<usize>,
    seed: u64,
    replicate: u64,
) -> Result<(AuditSetup, UitsResult)> {
    if entry.pooled {
        return Err(Error::Incompatible("unstratified runs have no stratified trajectory".into()));
    }
    let cfg = prepare(entry, pop, default_cap);
    let setup = AuditSetup { sizes: pop.sizes(), eta0, weights: None, method: cfg };
    let spec = setup.spec()?;
    let mut src = StreamSet::new(pop, setup.method.mode, seed, replicate);
    let res = run(&setup.method, &spec, &setup.sizes, &mut src, true)?;
    Ok((setup, res))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregates raw rows by (population, method), in first-seen order.
pub fn aggregate(raw: &[RawRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in raw {
        if !keys.contains(&(r.population, r.method)) {
            keys.push((r.population, r.method));
        }
    }
    keys.into_iter()
        .map(|(p, m)| {
            let rows: Vec<&RawRow> = raw.iter().filter(|r| r.population == p && r.method == m).collect();
            let ok: Vec<&&RawRow> = rows.iter().filter(|r| r.error.is_empty()).collect();
            let n = ok.len() as f64;
            let mut sizes: Vec<f64> = ok.iter().map(|r| r.n_tau as f64).collect();
            sizes.sort_by(f64::total_cmp);
            let mean = sizes.iter().sum::<f64>() / n;
            let var = if ok.len() > 1 {
                sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let stop = ok.iter().filter(|r| r.rejected).count() as f64 / n;
            Aggregate {
                population: p,
                population_label: rows[0].population_label.clone(),
                mean: rows[0].mean,
                method: m,
                method_label: rows[0].method_label.clone(),
                replicates: rows.len(),
                errors: rows.len() - ok.len(),
                mean_n_tau: mean,
                sd_n_tau: var.sqrt(),
                se_n_tau: (var / n).sqrt(),
                q10_n_tau: quantile(&sizes, 0.1),
                median_n_tau: quantile(&sizes, 0.5),
                q90_n_tau: quantile(&sizes, 0.9),
                mean_tau: ok.iter().map(|r| r.tau as f64).sum::<f64>() / n,
                stop_probability: stop,
                censored: stop < 1.0,
            }
        })
        .collect()
}

/// Runs every (population, method, replicate) job on a pool of `threads`
/// workers. Rows come back in job order whatever the thread count.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<ExperimentResult> {
    if config.replicates == 0 {
        return Err(Error::InvalidParam("replicates must be at least 1".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidParam("no methods to run".into()));
    }
    let cells = config.cells()?;
    let mut jobs = Vec::new();
    for (p, cell) in cells.iter().enumerate() {
        let reps = if cell.generator.is_deterministic() { 1 } else { config.replicates };
        for r in 0..reps {
            for m in 0..config.methods.len() {
                jobs.push((p, r, m));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let rows: Vec<(RawRow, f64)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, r, m)| {
                let cell = &cells[p];
                let entry = &config.methods[m];
                let seed = cell_seed(config.seed, p);
                let start = Instant::now();
                let outcome = make_population(&cell.generator, &cell.sizes, seed, r as u64)
                    .and_then(|pop| run_one(entry, &pop, config.eta0, config.cap, seed, r as u64));
                let secs = start.elapsed().as_secs_f64();
                let mut row = RawRow {
                    population: p,
                    population_label: cell.label(),
                    mean: cell.nominal_mean(),
                    method: m,
                    method_label: entry.label(),
                    replicate: r,
                    tau: 0,
                    n_tau: 0,
                    rejected: false,
                    error: String::new(),
                };
                match outcome {
                    Ok(res) => {
                        row.tau = res.tau;
                        row.n_tau = res.n_tau;
                        row.rejected = res.rejected;
                    }
                    Err(e) => row.error = e.to_string(),
                }
                (row, secs)
            })
            .collect()
    });
    let (raw, runtimes): (Vec<RawRow>, Vec<f64>) = rows.into_iter().unzip();
    let aggregates = aggregate(&raw);
    Ok(ExperimentResult { raw, aggregates, runtimes })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub seed: u64,
    pub version: String,
    pub config_sha256: String,
    pub replicates: usize,
    pub rows: usize,
    pub t_test_df: String,
}

/// Writes `raw.csv`, `aggregate.csv`, `timing.csv` and `metadata.json`.
/// Only the timing file depends on the machine.
pub fn write_outputs(config: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
    io::write_rows(&dir.join("raw.csv"), &result.raw)?;
    io::write_rows(&dir.join("aggregate.csv"), &result.aggregates)?;
    #[derive(Serialize)]
    struct Timing {
        population: usize,
        method: usize,
        replicate: usize,
        seconds: f64,
    }
    let timing: Vec<Timing> = result
        .raw
        .iter()
        .zip(&result.runtimes)
        .map(|(r, s)| Timing { population: r.population, method: r.method, replicate: r.replicate, seconds: *s })
        .collect();
    io::write_rows(&dir.join("timing.csv"), &timing)?;
    let meta = Metadata {
        name: config.name.clone(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.hash(),
        replicates: config.replicates,
        rows: result.raw.len(),
        t_test_df: "welch_satterthwaite".into(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("metadata.json"), json).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}
