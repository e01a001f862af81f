//! Stratified Student t-test and the level-versus-sample-size study that
//! shows it rejecting true nulls far above its nominal rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geometry::NullSpec;
use crate::methods::{decide, MethodConfig};
use crate::population::{DrawSource, Mode, StratifiedPopulation, StreamSet};

/// One-sided p-value for `H0: mean ≤ eta0` from per-stratum samples, with
/// Welch-Satterthwaite degrees of freedom.
pub fn stratified_t_test(samples: &[Vec<f64>], weights: &[f64], eta0: f64) -> Result<f64> {
    if samples.len() != weights.len() {
        return Err(Error::Dimension { expected: weights.len(), got: samples.len() });
    }
    if let Some(k) = samples.iter().position(|s| s.len() < 2) {
        return Err(Error::InvalidParam(format!("stratum {} needs at least two samples", k + 1)));
    }
    let mut estimate = 0.0;
    let mut var = 0.0;
    let mut df_den = 0.0;
    for (s, &w) in samples.iter().zip(weights) {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let s2 = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let a = w * w * s2 / n;
        estimate += w * mean;
        var += a;
        df_den += a * a / (n - 1.0);
    }
    let diff = estimate - eta0;
    if var <= 0.0 {
        return Ok(match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        });
    }
    let stat = diff / var.sqrt();
    let df = var * var / df_den;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParam(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

/// Within-stratum bag `{0 × 1, 0.5050505 × 99}`, mean just under 1/2.
pub fn skewed_bag() -> Vec<f64> {
    let mut bag = vec![0.5050505; 99];
    bag.insert(0, 0.0);
    bag
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Bags each stratum is sampled from with replacement.
    pub strata: Vec<Vec<f64>>,
    /// Per-stratum sample sizes to evaluate.
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub eta0: f64,
    /// A sequential method run on the same draws, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodConfig>,
}

impl LevelConfig {
    pub fn skewed(sizes: Vec<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            strata: vec![skewed_bag(), skewed_bag()],
            sizes,
            replicates,
            seed,
            alpha: 0.05,
            eta0: 0.5,
            method: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub n_per_stratum: usize,
    pub t_test_level: f64,
    /// Fraction of replicates whose sequential test rejected with at most
    /// this many draws per stratum.
    pub sequential_level: Option<f64>,
    pub replicates: usize,
}

/// Estimated rejection rate at each per-stratum sample size. Sample sizes
/// share draws within a replicate, and the sequential method sees them in
/// round-robin order.
pub fn level_study(cfg: &LevelConfig, threads: usize) -> Result<Vec<LevelRow>> {
    if cfg.replicates == 0 || cfg.sizes.is_empty() {
        return Err(Error::InvalidParam("need replicates and sample sizes".into()));
    }
    let pop = StratifiedPopulation::new(cfg.strata.clone())?;
    let k = pop.k();
    let weights = pop.weights();
    let max_n = *cfg.sizes.iter().max().unwrap_or(&2);
    let spec = NullSpec::new(weights.clone(), cfg.eta0)?;
    let method = cfg.method.clone().map(|mut m| {
        m.mode = Mode::WithReplacement;
        m.cap = Some(max_n * k);
        m
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let per_rep: Vec<Result<(Vec<bool>, Option<Vec<bool>>)>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let mut src = StreamSet::new(&pop, Mode::WithReplacement, cfg.seed, r as u64);
                let draws: Vec<Vec<f64>> = (0..k)
                    .map(|j| (0..max_n).map(|i| src.value(j, i)).collect::<Result<_>>())
                    .collect::<Result<_>>()?;
                let t_rej = cfg
                    .sizes
                    .iter()
                    .map(|&n| {
                        let prefix: Vec<Vec<f64>> = draws.iter().map(|d| d[..n].to_vec()).collect();
                        Ok(stratified_t_test(&prefix, &weights, cfg.eta0)? <= cfg.alpha)
                    })
                    .collect::<Result<Vec<bool>>>()?;
                let seq = match &method {
                    Some(m) => {
                        let res = decide(m, &spec, &vec![max_n; k], &mut src)?;
                        Some(cfg.sizes.iter().map(|&n| res.rejected && res.n_tau <= n * k).collect())
                    }
                    None => None,
                };
                Ok((t_rej, seq))
            })
            .collect()
    });
    let per_rep: Vec<(Vec<bool>, Option<Vec<bool>>)> = per_rep.into_iter().collect::<Result<_>>()?;
    let reps = cfg.replicates as f64;
    Ok(cfg
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| LevelRow {
            n_per_stratum: n,
            t_test_level: per_rep.iter().filter(|(t, _)| t[i]).count() as f64 / reps,
            sequential_level: method.as_ref().map(|_| {
                per_rep.iter().filter(|(_, s)| s.as_ref().is_some_and(|s| s[i])).count() as f64 / reps
            }),
            replicates: cfg.replicates,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_null_gives_one_half() {
        let s = vec![vec![0.5; 5], vec![0.5; 7]];
        assert_eq!(stratified_t_test(&s, &[0.5, 0.5], 0.5).unwrap(), 0.5);
        let s = vec![vec![0.6; 5], vec![0.6; 7]];
        assert_eq!(stratified_t_test(&s, &[0.5, 0.5], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn welch_example() {
        // stratum 1: mean 0.6, s² = 0.01·(1+0+1)/2 = 0.01; stratum 2 constant
        let s = vec![vec![0.5, 0.6, 0.7], vec![0.55, 0.55, 0.55]];
        let p = stratified_t_test(&s, &[0.5, 0.5], 0.5).unwrap();
        // stat = 0.075 / sqrt(0.25·0.01/3), df = 2
        let stat = 0.075 / (0.25f64 * 0.01 / 3.0).sqrt();
        let want = 1.0 - StudentsT::new(0.0, 1.0, 2.0).unwrap().cdf(stat);
        assert!((p - want).abs() < 1e-12);
    }

    #[test]
    fn needs_two_per_stratum() {
        assert!(stratified_t_test(&[vec![0.5], vec![0.5, 0.6]], &[0.5, 0.5], 0.5).is_err());
    }
}
