//! Experiment definitions behind the reference tables and figures, with the
//! grids, caps and replicate counts used there.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bets::{BetRule, Family};
use crate::error::Result;
use crate::geometry::NullSpec;
use crate::methods::{MethodConfig, Procedure, Strategy};
use crate::population::{make_population, DrawSource, Generator, StreamSet};
use crate::selection::SelectionRule;

use super::{
    grid_points, level_study, run_experiment, Aggregate, ExperimentConfig, ExperimentResult, GridFamily,
    LevelConfig, LevelRow, MethodEntry, PopulationGrid,
};

pub const TABLE1_G: [usize; 5] = [1, 3, 10, 100, 500];
pub const SCALING_K: [usize; 5] = [2, 3, 5, 10, 50];
pub const SCALING_NK: [usize; 2] = [10, 100];

/// Overrides shared by the reproduction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReproduceOptions {
    pub seed: u64,
    pub threads: usize,
    /// Replace each target's replicate count.
    pub replicates: Option<usize>,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self { seed: 0, threads: 1, replicates: None }
    }
}

pub fn agrapa() -> BetRule {
    BetRule::Agrapa { c: 0.75 }
}

pub fn plugin() -> BetRule {
    BetRule::Plugin { alpha: None }
}

pub fn inverse() -> BetRule {
    BetRule::Inverse { l: 0.1, u: 0.9 }
}

pub const POINT_MASS_SELECTIONS: [SelectionRule; 3] =
    [SelectionRule::RoundRobin, SelectionRule::PredictableKelly, SelectionRule::GreedyKelly];

/// Point-mass suite: global means 0.51 to 0.75, gaps 0 and 0.5, N = [200, 200].
pub fn point_mass_grid() -> PopulationGrid {
    PopulationGrid {
        family: GridFamily::PointMass,
        means: grid_points(0.51, 0.75, 0.01),
        gaps: vec![0.0, 0.5],
        sizes: vec![200, 200],
        sd: Vec::new(),
    }
}

fn experiment(name: &str, grid: PopulationGrid, methods: Vec<MethodEntry>, replicates: usize, cap: usize, opts: &ReproduceOptions) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        eta0: 0.5,
        populations: Vec::new(),
        grids: vec![grid],
        methods,
        replicates: opts.replicates.unwrap_or(replicates),
        seed: opts.seed,
        cap: Some(cap),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    #[serde(rename = "G")]
    pub g: usize,
    pub mean_n_tau: f64,
    pub runtime_seconds: f64,
}

/// Mean sample size of the banded UI-TS with AGRAPA bets over the point-mass
/// suite and the three selection rules, for each band count.
pub fn table1(g_values: &[usize], opts: &ReproduceOptions) -> Result<Vec<Table1Row>> {
    g_values
        .iter()
        .map(|&g| {
            let methods = POINT_MASS_SELECTIONS
                .iter()
                .map(|&s| MethodConfig::new(Strategy::Banded, agrapa(), s).with_g(g).into())
                .collect();
            let cfg = experiment("table1", point_mass_grid(), methods, 1, 400, opts);
            let res = run_experiment(&cfg, opts.threads)?;
            Ok(Table1Row {
                g,
                mean_n_tau: mean_of(&res.aggregates),
                runtime_seconds: res.runtimes.iter().sum(),
            })
        })
        .collect()
}

fn mean_of(aggs: &[Aggregate]) -> f64 {
    aggs.iter().map(|a| a.mean_n_tau).sum::<f64>() / aggs.len() as f64
}

/// Level of the stratified t-test and of a banded UI-TS on the skewed
/// two-stratum null population, by per-stratum sample size.
pub fn fig1_config(opts: &ReproduceOptions) -> LevelConfig {
    let sizes = vec![10, 20, 30, 50, 75, 100, 150, 200, 300, 400, 500];
    let mut cfg = LevelConfig::skewed(sizes, opts.replicates.unwrap_or(10_000), opts.seed);
    cfg.method = Some(MethodConfig::new(Strategy::Banded, agrapa(), SelectionRule::RoundRobin).with_g(10));
    cfg
}

pub fn fig1(opts: &ReproduceOptions) -> Result<Vec<LevelRow>> {
    level_study(&fig1_config(opts), opts.threads)
}

pub fn fig3_config(opts: &ReproduceOptions) -> ExperimentConfig {
    let mut methods: Vec<MethodEntry> = Vec::new();
    for bet in [agrapa(), plugin(), inverse()] {
        methods.push(MethodConfig::new(Strategy::Lcb, bet.clone(), SelectionRule::RoundRobin).into());
        for s in POINT_MASS_SELECTIONS {
            methods.push(MethodConfig::new(Strategy::Banded, bet.clone(), s).with_g(100).into());
        }
    }
    experiment("fig3", point_mass_grid(), methods, 1, 400, opts)
}

/// Sample sizes on the point-mass suite for LCB and the banded UI-TS.
pub fn fig3(opts: &ReproduceOptions) -> Result<ExperimentResult> {
    run_experiment(&fig3_config(opts), opts.threads)
}

pub fn fig4_config(opts: &ReproduceOptions) -> ExperimentConfig {
    let grid = PopulationGrid {
        family: GridFamily::Bernoulli,
        means: grid_points(0.51, 0.74, 0.01),
        gaps: vec![0.0, 0.5],
        sizes: vec![2100, 2100],
        sd: Vec::new(),
    };
    let bets = [
        agrapa(),
        plugin(),
        inverse(),
        BetRule::ShrinkTrunc { d: 20.0 },
        BetRule::Kelly { family: Family::Bernoulli, means: Vec::new() },
    ];
    let mut methods: Vec<MethodEntry> = Vec::new();
    for bet in bets {
        methods.push(MethodConfig::new(Strategy::Lcb, bet.clone(), SelectionRule::RoundRobin).into());
        methods.push(MethodConfig::new(Strategy::Banded, bet, SelectionRule::RoundRobin).with_g(100).into());
    }
    experiment("fig4", grid, methods, 1000, 4200, opts)
}

/// Bernoulli populations with round-robin selection.
pub fn fig4(opts: &ReproduceOptions) -> Result<ExperimentResult> {
    run_experiment(&fig4_config(opts), opts.threads)
}

pub fn fig5_config(opts: &ReproduceOptions) -> ExperimentConfig {
    let grid = PopulationGrid {
        family: GridFamily::TruncatedGaussian,
        means: grid_points(0.5, 0.7, 0.05),
        gaps: vec![0.0, 0.2],
        sizes: vec![2100, 2100],
        sd: vec![0.01, 0.1],
    };
    let mut methods: Vec<MethodEntry> = Vec::new();
    for bet in [agrapa(), plugin(), inverse()] {
        methods.push(MethodConfig::new(Strategy::Lcb, bet.clone(), SelectionRule::RoundRobin).into());
        methods.push(MethodConfig::new(Strategy::Banded, bet.clone(), SelectionRule::RoundRobin).with_g(100).into());
        methods.push(MethodEntry {
            config: MethodConfig::new(Strategy::BruteForce, bet, SelectionRule::RoundRobin),
            pooled: true,
        });
    }
    experiment("fig5", grid, methods, 500, 4200, opts)
}

/// Truncated Gaussian populations, with an unstratified benchmark on the
/// pooled population.
pub fn fig5(opts: &ReproduceOptions) -> Result<ExperimentResult> {
    run_experiment(&fig5_config(opts), opts.threads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub k: usize,
    pub n_k: usize,
    pub n: usize,
    pub method: String,
    pub runtime_seconds: f64,
    /// Global sample size at the first crossing, if within the population size.
    pub n_tau: Option<usize>,
    pub solves: Option<usize>,
}

/// Runs LCB or convex UI-TS (inverse bets, round robin) over the whole
/// length-N interleaving of K point masses at 0.6, timing the full run.
pub fn scaling_row(k: usize, n_k: usize, strategy: Strategy) -> Result<ScalingRow> {
    let sizes = vec![n_k; k];
    let spec = NullSpec::from_sizes(&sizes, 0.5)?;
    let cfg = MethodConfig::new(strategy, inverse(), SelectionRule::RoundRobin);
    let pop = make_population(&Generator::PointMass { means: vec![0.6; k] }, &sizes, 0, 0)?;
    let mut src = StreamSet::new(&pop, cfg.mode, 0, 0);
    let n = k * n_k;
    let start = Instant::now();
    let mut proc = Procedure::new(&cfg, &spec, &sizes)?;
    let mut n_tau = None;
    while proc.t() < n {
        let Some(j) = proc.directive() else { break };
        let x = src.value(j, proc.counts()[j])?;
        proc.observe(j, x)?;
        if n_tau.is_none() && proc.rejected_at().is_some() {
            n_tau = Some(proc.n());
        }
    }
    let runtime_seconds = start.elapsed().as_secs_f64();
    let solves = match &proc {
        Procedure::Convex(c) => Some(c.solves()),
        _ => None,
    };
    Ok(ScalingRow { k, n_k, n, method: strategy.name().into(), runtime_seconds, n_tau, solves })
}

pub fn scaling(ks: &[usize], nks: &[usize]) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &n_k in nks {
        for &k in ks {
            rows.push(scaling_row(k, n_k, Strategy::Lcb)?);
            rows.push(scaling_row(k, n_k, Strategy::Convex)?);
        }
    }
    Ok(rows)
}
