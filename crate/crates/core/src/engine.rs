//! Betting test supermartingales in log space: stratum-wise products,
//! intersection products across strata, running maxima and P-values.

use crate::bets::{expected_log_growth, BetRule, Family};
use crate::error::{Error, Result};
use crate::population::{conditional_null_mean, DrawSource, Mode};
use crate::selection::{argmax_ucb, round_robin, ucb_select, SelectionRule, TermStats};

/// Log of one betting term, or certainty that the stratum null is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Log(f64),
    Refuted,
}

/// `log(1 + λ(x − η))` with the conventions for degenerate null means: a
/// negative conditional mean is impossible, a conditional mean above 1 can
/// not be beaten so the bet is dropped, and an infinite bet against a zero
/// mean wins outright on any positive draw.
pub fn betting_term(x: f64, lambda: f64, eta: f64) -> Result<Term> {
    if eta < 0.0 {
        return Ok(Term::Refuted);
    }
    if eta > 1.0 || lambda == 0.0 {
        return Ok(Term::Log(0.0));
    }
    if lambda.is_infinite() {
        return Ok(if x > eta { Term::Refuted } else { Term::Log(0.0) });
    }
    let z = 1.0 + lambda * (x - eta);
    if z < -1e-12 {
        return Err(Error::NegativeTerm { z, lambda });
    }
    if z <= 0.0 {
        return Ok(Term::Log(f64::NEG_INFINITY));
    }
    Ok(Term::Log((lambda * (x - eta)).ln_1p()))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogSum {
    s: f64,
    c: f64,
}

impl LogSum {
    pub fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Forced {
    #[default]
    None,
    /// Observed data contradict the stratum null.
    NullImpossible,
    /// The product hit zero.
    Ruined,
}

/// One stratum's TSM for a fixed null mean.
#[derive(Debug, Clone, Default)]
pub struct StratumTsm {
    log: LogSum,
    pub log_max: f64,
    pub n: usize,
    pub sum: f64,
    pub moments: crate::bets::MomentState,
    pub forced: Forced,
    pub terms: TermStats,
}

impl StratumTsm {
    pub fn log_value(&self) -> f64 {
        match self.forced {
            Forced::None => self.log.value(),
            Forced::NullImpossible => f64::INFINITY,
            Forced::Ruined => f64::NEG_INFINITY,
        }
    }

    /// Multiplies in `1 + λ(x − η_kt)`; returns the term applied.
    pub fn update(&mut self, x: f64, lambda: f64, eta_kt: f64) -> Result<Term> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange(x));
        }
        let term = betting_term(x, lambda, eta_kt)?;
        match term {
            Term::Refuted => {
                self.forced = Forced::NullImpossible;
                self.terms.push(f64::INFINITY);
            }
            Term::Log(l) => {
                if l == f64::NEG_INFINITY {
                    if self.forced == Forced::None {
                        self.forced = Forced::Ruined;
                    }
                } else if self.forced == Forced::None {
                    self.log.add(l);
                }
                self.terms.push(l.exp());
            }
        }
        self.moments.update(x);
        self.n += 1;
        self.sum += x;
        self.log_max = self.log_max.max(self.log_value());
        Ok(term)
    }
}

/// `min(1, 1 / running max)` from the log of the running max.
pub fn p_value_from_log(log_max: f64) -> f64 {
    (-log_max).exp().min(1.0)
}

/// One intersection null with its per-stratum TSMs.
#[derive(Debug, Clone)]
pub struct IntersectionTracker {
    pub eta: Vec<f64>,
    pub strata: Vec<StratumTsm>,
    total: LogSum,
    impossible: usize,
    ruined: usize,
    log_max: f64,
    pub t: usize,
    pub rejected_at: Option<usize>,
    /// stratum, conditional null mean and bet of the latest update
    pub last: Option<(usize, f64, f64)>,
}

impl IntersectionTracker {
    pub fn new(eta: Vec<f64>) -> Self {
        let k = eta.len();
        Self {
            eta,
            strata: vec![StratumTsm::default(); k],
            total: LogSum::default(),
            impossible: 0,
            ruined: 0,
            log_max: 0.0,
            t: 0,
            rejected_at: None,
            last: None,
        }
    }

    pub fn k(&self) -> usize {
        self.eta.len()
    }

    /// Sum of the stratum logs; `+∞` once any stratum null is impossible.
    pub fn log_value(&self) -> f64 {
        if self.impossible > 0 {
            f64::INFINITY
        } else if self.ruined > 0 {
            f64::NEG_INFINITY
        } else {
            self.total.value()
        }
    }

    pub fn log_running_max(&self) -> f64 {
        self.log_max
    }

    pub fn p_value(&self) -> f64 {
        p_value_from_log(self.log_max)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.strata.iter().map(|s| s.n).collect()
    }

    pub fn eta_kt(&self, k: usize, sizes: &[usize], mode: Mode) -> f64 {
        let s = &self.strata[k];
        conditional_null_mean(self.eta[k], s.sum, s.n, sizes[k], mode)
    }

    pub fn observe(
        &mut self,
        k: usize,
        x: f64,
        lambda: f64,
        eta_kt: f64,
        log_threshold: f64,
    ) -> Result<()> {
        let s = &mut self.strata[k];
        let before = s.forced;
        let term = s.update(x, lambda, eta_kt)?;
        match (before, s.forced) {
            (Forced::None, Forced::NullImpossible) => self.impossible += 1,
            (Forced::Ruined, Forced::NullImpossible) => {
                self.ruined -= 1;
                self.impossible += 1;
            }
            (Forced::None, Forced::Ruined) => self.ruined += 1,
            _ => {}
        }
        if let (Forced::None, Term::Log(l)) = (s.forced, term) {
            self.total.add(l);
        }
        self.t += 1;
        self.last = Some((k, eta_kt, lambda));
        self.log_max = self.log_max.max(self.log_value());
        if self.rejected_at.is_none() && self.log_max >= log_threshold {
            self.rejected_at = Some(self.t);
        }
        Ok(())
    }

    /// Picks the next stratum for this tracker's own interleaving.
    pub fn select(
        &self,
        rule: SelectionRule,
        bet: &BetRule,
        exhausted: &[bool],
        sizes: &[usize],
        mode: Mode,
        alpha: f64,
    ) -> Option<usize> {
        let t = self.t + 1;
        match rule {
            SelectionRule::RoundRobin => round_robin(t, exhausted),
            SelectionRule::PredictableKelly | SelectionRule::GreedyKelly => {
                let stats: Vec<TermStats> = self.strata.iter().map(|s| s.terms).collect();
                ucb_select(t, &stats, exhausted)
            }
            SelectionRule::VertexSweep => {
                let k = self.eta.iter().enumerate().filter(|(k, _)| !exhausted[*k]);
                k.min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k)
            }
            SelectionRule::KellyOracle => {
                let growth: Vec<f64> = (0..self.k())
                    .map(|k| self.oracle_growth(k, bet, sizes, mode, alpha))
                    .collect();
                argmax_ucb(&growth, exhausted)
            }
        }
    }

    fn oracle_growth(&self, k: usize, bet: &BetRule, sizes: &[usize], mode: Mode, alpha: f64) -> f64 {
        let eta = self.eta_kt(k, sizes, mode);
        if eta < 0.0 {
            return f64::INFINITY;
        }
        let (family, mu) = match bet {
            BetRule::Kelly { family, means } => (*family, means[k]),
            _ => (Family::Bernoulli, self.strata[k].moments.mean()),
        };
        let lambda = bet.lambda(k, &self.strata[k].moments, eta, alpha);
        expected_log_growth(family, mu, eta, lambda)
    }

    /// Select, bet, draw and update for a single null tested on its own.
    pub fn step(
        &mut self,
        src: &mut dyn DrawSource,
        bet: &BetRule,
        rule: SelectionRule,
        sizes: &[usize],
        mode: Mode,
        alpha: f64,
    ) -> Result<Option<usize>> {
        let exhausted: Vec<bool> = (0..self.k())
            .map(|k| src.limit(k).is_some_and(|n| self.strata[k].n >= n))
            .collect();
        let Some(k) = self.select(rule, bet, &exhausted, sizes, mode, alpha) else {
            return Ok(None);
        };
        let eta = self.eta_kt(k, sizes, mode);
        let lambda = bet.lambda(k, &self.strata[k].moments, eta, alpha);
        let x = src.value(k, self.strata[k].n)?;
        self.observe(k, x, lambda, eta, -alpha.ln())?;
        Ok(Some(k))
    }
}
