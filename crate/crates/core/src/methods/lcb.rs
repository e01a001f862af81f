//! Stratum-weighted sum of per-stratum lower confidence bounds.
//!
//! Bets that keep the stratum TSM non-increasing in the null mean get an
//! exact bound by bisection. Other bets are tested on a grid of null means,
//! moving a pointer to the first grid point not yet rejected.

use crate::bets::{inverse_c, BetRule, MomentState};
use crate::engine::{betting_term, StratumTsm, Term};
use crate::error::Result;
use crate::geometry::NullSpec;
use crate::population::{conditional_null_mean, Mode};
use crate::selection::round_robin;

use super::MethodConfig;

pub const LCB_GRID_STEP: f64 = 1e-3;
const GRID_POINTS: usize = 1001;
const BISECT_ITERS: usize = 60;

fn grid_eta(j: usize) -> f64 {
    (j as f64 * LCB_GRID_STEP).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    /// `1 + λ(x − η)` with λ free of η.
    Linear,
    /// `1 − c + c x/η`.
    Inverse,
    Grid,
}

fn log_term(kind: Kind, base: f64, x: f64, eta: f64) -> f64 {
    let lambda = match kind {
        Kind::Inverse => {
            if eta > 0.0 {
                base / eta
            } else {
                f64::INFINITY
            }
        }
        _ => base,
    };
    match betting_term(x, lambda, eta) {
        Ok(Term::Log(l)) => l,
        Ok(Term::Refuted) => f64::INFINITY,
        Err(_) => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone)]
struct Ctx<'a> {
    bet: &'a BetRule,
    n_k: usize,
    mode: Mode,
    alpha: f64,
    k: usize,
}

#[derive(Debug, Clone)]
struct StratumBound {
    kind: Kind,
    xs: Vec<f64>,
    bases: Vec<f64>,
    moments: MomentState,
    bound: f64,
    hi: f64,
    log_hi: f64,
    j: usize,
    path: StratumTsm,
    all: Option<Vec<StratumTsm>>,
}

impl StratumBound {
    fn new(kind: Kind) -> Self {
        Self {
            kind,
            xs: Vec::new(),
            bases: Vec::new(),
            moments: MomentState::new(),
            bound: 0.0,
            hi: 0.0,
            log_hi: 0.0,
            j: 0,
            path: StratumTsm::default(),
            all: None,
        }
    }

    /// Current log value at `eta` and its running maximum over time.
    fn exact_log(&self, eta: f64) -> (f64, f64) {
        let mut s = 0.0;
        let mut max = 0.0f64;
        for (x, b) in self.xs.iter().zip(&self.bases) {
            s += log_term(self.kind, *b, *x, eta);
            max = max.max(s);
        }
        (s, max)
    }

    /// Current log value at `eta` and its derivative in `eta`.
    fn log_and_slope(&self, eta: f64) -> (f64, f64) {
        let mut f = 0.0;
        let mut d = 0.0;
        for (x, b) in self.xs.iter().zip(&self.bases) {
            f += log_term(self.kind, *b, *x, eta);
            let (num, z) = match self.kind {
                Kind::Inverse => (b * x / (eta * eta), 1.0 - b + b * x / eta),
                _ => (*b, 1.0 + b * (x - eta)),
            };
            d -= num / z;
        }
        (f, d)
    }

    /// Largest η with current log value `≥ level`, given that it holds at
    /// `lo`: Newton steps kept inside a shrinking bracket.
    fn current_root(&self, lo: f64, level: f64) -> (f64, f64) {
        const GAP: f64 = 5e-14;
        if self.log_and_slope(1.0).0 >= level {
            return (1.0, 1.0);
        }
        let (mut a, mut b) = (lo, 1.0);
        let (mut p, (mut fp, mut dp)) = (a, self.log_and_slope(a));
        for _ in 0..200 {
            if b - a <= 2.0 * GAP {
                break;
            }
            let mut q = if fp.is_finite() && dp < 0.0 { p + (fp - level) / -dp } else { f64::NAN };
            if !(q > a && q < b) {
                q = 0.5 * (a + b);
            }
            q = q.clamp(a + GAP, b - GAP);
            let (fq, dq) = self.log_and_slope(q);
            if fq >= level {
                a = q;
            } else {
                b = q;
            }
            (p, fp, dp) = (q, fq, dq);
        }
        (a, b)
    }

    /// Largest η with `f(η) ≥ level` for a non-increasing `f`, bracketed.
    fn bisect(&self, lo: f64, level: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
        if f(1.0) >= level {
            return (1.0, 1.0);
        }
        let (mut a, mut b) = (lo, 1.0);
        for _ in 0..BISECT_ITERS {
            if b - a <= 1e-13 {
                break;
            }
            let m = 0.5 * (a + b);
            if f(m) >= level {
                a = m;
            } else {
                b = m;
            }
        }
        (a, b)
    }

    fn replay(&self, eta: f64, cx: &Ctx) -> StratumTsm {
        let mut path = StratumTsm::default();
        for &x in &self.xs {
            step_path(&mut path, eta, x, cx);
        }
        path
    }

    fn observe(&mut self, x: f64, cx: &Ctx, log_thr: f64) {
        match self.kind {
            Kind::Linear | Kind::Inverse => {
                let base = match (self.kind, cx.bet) {
                    (Kind::Inverse, BetRule::Inverse { l, u }) => inverse_c(&self.moments, *l, *u),
                    _ => cx.bet.lambda(cx.k, &self.moments, 1.0, cx.alpha),
                };
                self.xs.push(x);
                self.bases.push(base);
                self.log_hi += log_term(self.kind, base, x, self.hi);
                if self.log_hi >= log_thr {
                    let (lo, hi) = self.current_root(self.hi, log_thr);
                    self.bound = self.bound.max(lo);
                    self.hi = hi;
                    self.log_hi = self.exact_log(hi).0;
                }
            }
            Kind::Grid => {
                self.xs.push(x);
                if self.j < GRID_POINTS {
                    step_path(&mut self.path, grid_eta(self.j), x, cx);
                    while self.j < GRID_POINTS && self.path.log_max >= log_thr {
                        self.j += 1;
                        if self.j < GRID_POINTS {
                            self.path = self.replay(grid_eta(self.j), cx);
                        }
                    }
                }
                if let Some(all) = &mut self.all {
                    for (j, p) in all.iter_mut().enumerate() {
                        step_path(p, grid_eta(j), x, cx);
                    }
                }
                self.bound = if self.j == 0 { 0.0 } else { grid_eta(self.j - 1) };
            }
        }
        self.moments.update(x);
    }

    fn ensure_paths(&mut self, cx: &Ctx) {
        if self.kind == Kind::Grid && self.all.is_none() {
            self.all = Some((0..GRID_POINTS).map(|j| self.replay(grid_eta(j), cx)).collect());
        }
    }

    /// The bound at log level `level`, using running maxima over time.
    fn bound_at(&self, level: f64, paths: Option<&[StratumTsm]>) -> f64 {
        match self.kind {
            Kind::Linear | Kind::Inverse => {
                if self.exact_log(0.0).1 < level {
                    return 0.0;
                }
                self.bisect(0.0, level, |e| self.exact_log(e).1).0
            }
            Kind::Grid => {
                let paths = paths.expect("grid paths");
                match paths.iter().position(|p| p.log_max < level) {
                    Some(0) => 0.0,
                    Some(j) => grid_eta(j - 1),
                    None => 1.0,
                }
            }
        }
    }
}

fn step_path(path: &mut StratumTsm, eta: f64, x: f64, cx: &Ctx) {
    let eta_kt = conditional_null_mean(eta, path.sum, path.n, cx.n_k, cx.mode);
    let lambda = cx.bet.lambda(cx.k, &path.moments, eta_kt, cx.alpha);
    if path.update(x, lambda, eta_kt).is_err() {
        path.forced = crate::engine::Forced::Ruined;
    }
}

#[derive(Debug, Clone)]
pub struct LcbProcedure {
    strata: Vec<StratumBound>,
    weights: Vec<f64>,
    eta0: f64,
    bet: BetRule,
    sizes: Vec<usize>,
    mode: Mode,
    alpha: f64,
    log_thr: f64,
    t: usize,
    counts: Vec<usize>,
    rejected_at: Option<usize>,
    record: bool,
}

impl LcbProcedure {
    pub fn new(cfg: &MethodConfig, spec: &NullSpec, sizes: &[usize]) -> Result<Self> {
        let kind = if cfg.mode == Mode::WithReplacement && cfg.bets.monotone_in_eta() {
            if matches!(cfg.bets, BetRule::Inverse { .. }) {
                Kind::Inverse
            } else {
                Kind::Linear
            }
        } else {
            Kind::Grid
        };
        Ok(Self {
            strata: (0..spec.k()).map(|_| StratumBound::new(kind)).collect(),
            weights: spec.weights.clone(),
            eta0: spec.eta0,
            bet: cfg.bets.clone(),
            sizes: sizes.to_vec(),
            mode: cfg.mode,
            alpha: cfg.alpha,
            log_thr: -cfg.alpha.ln(),
            t: 0,
            counts: vec![0; spec.k()],
            rejected_at: None,
            record: false,
        })
    }

    fn ctx(&self, k: usize) -> Ctx<'_> {
        Ctx { bet: &self.bet, n_k: self.sizes[k], mode: self.mode, alpha: self.alpha, k }
    }

    pub fn set_record(&mut self, on: bool) {
        self.record = on;
        if on {
            for k in 0..self.strata.len() {
                let cx = Ctx { bet: &self.bet, n_k: self.sizes[k], mode: self.mode, alpha: self.alpha, k };
                self.strata[k].ensure_paths(&cx);
            }
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn counts(&self) -> Vec<usize> {
        self.counts.clone()
    }

    pub fn rejected_at(&self) -> Option<usize> {
        self.rejected_at
    }

    /// Per-stratum lower bounds at the configured level.
    pub fn stratum_bounds(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.bound).collect()
    }

    /// `Σ w_k L_k`.
    pub fn bound(&self) -> f64 {
        self.weights.iter().zip(&self.strata).map(|(w, s)| w * s.bound).sum()
    }

    pub fn last_bet(&self) -> (Option<f64>, Option<f64>) {
        (None, None)
    }

    pub fn directive(&self) -> Option<usize> {
        let exhausted: Vec<bool> = match self.mode {
            Mode::WithReplacement => vec![false; self.counts.len()],
            Mode::WithoutReplacement => self.counts.iter().zip(&self.sizes).map(|(c, n)| c >= n).collect(),
        };
        round_robin(self.t + 1, &exhausted)
    }

    pub fn observe(&mut self, k: usize, x: f64) -> Result<()> {
        let cx = Ctx { bet: &self.bet, n_k: self.sizes[k], mode: self.mode, alpha: self.alpha, k };
        self.strata[k].observe(x, &cx, self.log_thr);
        self.counts[k] += 1;
        self.t += 1;
        if self.rejected_at.is_none() && self.bound() > self.eta0 {
            self.rejected_at = Some(self.t);
        }
        Ok(())
    }

    /// Smallest level at which the weighted bound exceeds the null mean.
    pub fn p_value(&self) -> f64 {
        let owned: Vec<Option<Vec<StratumTsm>>> = self
            .strata
            .iter()
            .enumerate()
            .map(|(k, s)| match (s.kind, &s.all) {
                (Kind::Grid, None) => {
                    let cx = self.ctx(k);
                    Some((0..GRID_POINTS).map(|j| s.replay(grid_eta(j), &cx)).collect())
                }
                _ => None,
            })
            .collect();
        let total = |level: f64| -> f64 {
            self.strata
                .iter()
                .zip(&owned)
                .zip(&self.weights)
                .map(|((s, o), w)| {
                    let paths = o.as_deref().or(s.all.as_deref());
                    w * s.bound_at(level, paths)
                })
                .sum()
        };
        if total(0.0) <= self.eta0 {
            return 1.0;
        }
        let mut hi = 1.0;
        while total(hi) > self.eta0 {
            hi *= 2.0;
            if hi > 745.0 {
                return 0.0;
            }
        }
        let mut lo = 0.0;
        for _ in 0..40 {
            let m = 0.5 * (lo + hi);
            if total(m) > self.eta0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        (-lo).exp().min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::{MethodConfig, Strategy};
    use crate::selection::SelectionRule;

    fn one_stratum(bets: BetRule) -> LcbProcedure {
        let spec = NullSpec::new(vec![1.0], 0.5).unwrap();
        let cfg = MethodConfig::new(Strategy::Lcb, bets, SelectionRule::RoundRobin);
        LcbProcedure::new(&cfg, &spec, &[100]).unwrap()
    }

    #[test]
    fn five_ones_with_unit_bets() {
        let mut p = one_stratum(BetRule::Fixed { lambda: 1.0 });
        for _ in 0..5 {
            p.observe(0, 1.0).unwrap();
        }
        let want = 2.0 - 20f64.powf(0.2);
        assert!((p.stratum_bounds()[0] - want).abs() < 1e-10, "{:?}", p.stratum_bounds());
    }

    #[test]
    fn no_data_bound_is_zero() {
        let p = one_stratum(BetRule::Agrapa { c: 0.75 });
        assert_eq!(p.bound(), 0.0);
        assert_eq!(p.p_value(), 1.0);
    }

    #[test]
    fn grid_and_exact_agree_roughly() {
        let mut a = one_stratum(BetRule::Fixed { lambda: 0.8 });
        let mut spec_cfg = MethodConfig::new(Strategy::Lcb, BetRule::Fixed { lambda: 0.8 }, SelectionRule::RoundRobin);
        spec_cfg.mode = Mode::WithoutReplacement;
        let spec = NullSpec::new(vec![1.0], 0.5).unwrap();
        let mut b = LcbProcedure::new(&spec_cfg, &spec, &[100000]).unwrap();
        for i in 0..60 {
            let x = if i % 3 == 0 { 0.2 } else { 0.9 };
            a.observe(0, x).unwrap();
            b.observe(0, x).unwrap();
        }
        let (ea, eb) = (a.stratum_bounds()[0], b.stratum_bounds()[0]);
        assert!(ea > 0.3 && (ea - eb).abs() < 5e-3, "{ea} {eb}");
    }

    #[test]
    fn p_value_matches_decision() {
        let mut p = one_stratum(BetRule::Inverse { l: 0.1, u: 0.9 });
        while p.rejected_at().is_none() {
            p.observe(0, 0.9).unwrap();
            let pv = p.p_value();
            assert_eq!(pv <= 0.05 + 1e-9, p.rejected_at().is_some(), "t={} p={pv}", p.t());
        }
    }
}
