//! Finite stratified populations, seeded sample streams and the conditional
//! null mean for sampling without replacement.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedPopulation {
    strata: Vec<Vec<f64>>,
}

impl StratifiedPopulation {
    pub fn new(strata: Vec<Vec<f64>>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidParam("a population needs at least one stratum".into()));
        }
        for (k, s) in strata.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidParam(format!("stratum {} is empty", k + 1)));
            }
            if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange(*v));
            }
        }
        Ok(Self { strata })
    }

    pub fn k(&self) -> usize {
        self.strata.len()
    }

    pub fn stratum(&self, k: usize) -> &[f64] {
        &self.strata[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.strata.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.strata.iter().map(Vec::len).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.strata.iter().map(|s| s.len() as f64 / n).collect()
    }

    pub fn stratum_means(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        self.weights().iter().zip(self.stratum_means()).map(|(w, m)| w * m).sum()
    }

    /// Distinct values per stratum, ascending.
    pub fn distinct_values(&self) -> Vec<Vec<f64>> {
        self.strata
            .iter()
            .map(|s| {
                let mut v = s.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect()
    }
}

/// Superpopulation generators used by the simulation studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    PointMass { means: Vec<f64> },
    Bernoulli { p: Vec<f64> },
    TruncatedGaussian { means: Vec<f64>, sd: f64 },
}

impl Generator {
    pub fn k(&self) -> usize {
        match self {
            Generator::PointMass { means } => means.len(),
            Generator::Bernoulli { p } => p.len(),
            Generator::TruncatedGaussian { means, .. } => means.len(),
        }
    }

    /// Stratum means of the superpopulation (before truncation for Gaussians).
    pub fn nominal_means(&self) -> Vec<f64> {
        match self {
            Generator::PointMass { means } => means.clone(),
            Generator::Bernoulli { p } => p.clone(),
            Generator::TruncatedGaussian { means, .. } => means.clone(),
        }
    }

    /// True when the population is the same for every seed.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Generator::PointMass { .. })
    }
}

/// Reserved stream index for population construction, above any stratum index.
const BUILD_STREAM: u64 = 1 << 16;

/// Seeded generator for `(master seed, replicate, stream)`; every stratum of
/// every replicate gets its own independent stream.
pub fn stream_rng(master: u64, replicate: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    rng.set_stream((replicate << 20) | (stream & 0xF_FFFF));
    rng
}

pub fn make_population(
    generator: &Generator,
    sizes: &[usize],
    master: u64,
    replicate: u64,
) -> Result<StratifiedPopulation> {
    if sizes.len() != generator.k() {
        return Err(Error::Dimension { expected: generator.k(), got: sizes.len() });
    }
    let strata = match generator {
        Generator::PointMass { means } => {
            check_unit(means)?;
            means.iter().zip(sizes).map(|(&m, &n)| vec![m; n]).collect()
        }
        Generator::Bernoulli { p } => {
            check_unit(p)?;
            p.iter()
                .zip(sizes)
                .enumerate()
                .map(|(k, (&pk, &n))| {
                    let mut rng = stream_rng(master, replicate, BUILD_STREAM + k as u64);
                    (0..n).map(|_| if rng.random::<f64>() < pk { 1.0 } else { 0.0 }).collect()
                })
                .collect()
        }
        Generator::TruncatedGaussian { means, sd } => {
            check_unit(means)?;
            if !(sd.is_finite() && *sd > 0.0) {
                return Err(Error::InvalidParam(format!("standard deviation {sd} must be positive")));
            }
            means
                .iter()
                .zip(sizes)
                .enumerate()
                .map(|(k, (&m, &n))| {
                    let mut rng = stream_rng(master, replicate, BUILD_STREAM + k as u64);
                    let normal = Normal::new(m, *sd).expect("validated");
                    (0..n)
                        .map(|_| loop {
                            let x: f64 = normal.sample(&mut rng);
                            if (0.0..=1.0).contains(&x) {
                                break x;
                            }
                        })
                        .collect()
                })
                .collect()
        }
    };
    StratifiedPopulation::new(strata)
}

fn check_unit(xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(x) => Err(Error::InvalidParam(format!("parameter {x} is outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Draws from one stratum's bag.
#[derive(Debug, Clone)]
pub struct SampleStream {
    bag: Arc<Vec<f64>>,
    mode: Mode,
    rng: ChaCha12Rng,
    /// lazily shuffled indices for sampling without replacement
    order: Vec<usize>,
    drawn: usize,
}

impl SampleStream {
    pub fn new(bag: Arc<Vec<f64>>, mode: Mode, rng: ChaCha12Rng) -> Self {
        let order = match mode {
            Mode::WithoutReplacement => (0..bag.len()).collect(),
            Mode::WithReplacement => Vec::new(),
        };
        Self { bag, mode, rng, order, drawn: 0 }
    }

    pub fn drawn(&self) -> usize {
        self.drawn
    }

    pub fn exhausted(&self) -> bool {
        self.mode == Mode::WithoutReplacement && self.drawn >= self.bag.len()
    }

    pub fn draw_next(&mut self, stratum: usize) -> Result<f64> {
        let value = match self.mode {
            Mode::WithReplacement => self.bag[self.rng.random_range(0..self.bag.len())],
            Mode::WithoutReplacement => {
                if self.exhausted() {
                    return Err(Error::Exhausted { stratum });
                }
                let j = self.rng.random_range(self.drawn..self.bag.len());
                self.order.swap(self.drawn, j);
                self.bag[self.order[self.drawn]]
            }
        };
        self.drawn += 1;
        Ok(value)
    }
}

/// The null mean the values not yet drawn must have for the stratum null to hold.
pub fn conditional_null_mean(
    eta_k: f64,
    drawn_sum: f64,
    drawn_count: usize,
    n_k: usize,
    mode: Mode,
) -> f64 {
    match mode {
        Mode::WithReplacement => eta_k,
        Mode::WithoutReplacement => {
            (n_k as f64 * eta_k - drawn_sum) / (n_k as f64 - drawn_count as f64)
        }
    }
}

/// Random access to the sequence of draws from each stratum. Different
/// interleavings read the same per-stratum sequences at different depths.
pub trait DrawSource {
    fn strata(&self) -> usize;
    /// Value of the `i`-th draw (0-based) from stratum `k`.
    fn value(&mut self, k: usize, i: usize) -> Result<f64>;
    /// Number of draws stratum `k` can supply, if limited.
    fn limit(&self, k: usize) -> Option<usize>;
}

/// Seeded streams over a population with a cache of draws already made.
#[derive(Debug, Clone)]
pub struct StreamSet {
    streams: Vec<SampleStream>,
    cache: Vec<Vec<f64>>,
    mode: Mode,
    sizes: Vec<usize>,
}

impl StreamSet {
    pub fn new(pop: &StratifiedPopulation, mode: Mode, master: u64, replicate: u64) -> Self {
        let streams = (0..pop.k())
            .map(|k| {
                SampleStream::new(
                    Arc::new(pop.stratum(k).to_vec()),
                    mode,
                    stream_rng(master, replicate, k as u64),
                )
            })
            .collect();
        Self { streams, cache: vec![Vec::new(); pop.k()], mode, sizes: pop.sizes() }
    }
}

impl DrawSource for StreamSet {
    fn strata(&self) -> usize {
        self.streams.len()
    }

    fn value(&mut self, k: usize, i: usize) -> Result<f64> {
        while self.cache[k].len() <= i {
            let x = self.streams[k].draw_next(k)?;
            self.cache[k].push(x);
        }
        Ok(self.cache[k][i])
    }

    fn limit(&self, k: usize) -> Option<usize> {
        match self.mode {
            Mode::WithReplacement => None,
            Mode::WithoutReplacement => Some(self.sizes[k]),
        }
    }
}

/// Recorded per-stratum sequences, e.g. from an audit log.
#[derive(Debug, Clone, Default)]
pub struct Recorded {
    pub values: Vec<Vec<f64>>,
}

impl DrawSource for Recorded {
    fn strata(&self) -> usize {
        self.values.len()
    }

    fn value(&mut self, k: usize, i: usize) -> Result<f64> {
        self.values[k].get(i).copied().ok_or(Error::Exhausted { stratum: k })
    }

    fn limit(&self, k: usize) -> Option<usize> {
        Some(self.values[k].len())
    }
}
