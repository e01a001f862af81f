//! Convex UI-TS for inverse bets: the log I-TSM is convex in the null, so
//! its minimum over the null polytope is found by projected gradient descent.

use crate::bets::{inverse_bet, inverse_c, BetRule, MomentState};
use crate::engine::{p_value_from_log, IntersectionTracker};
use crate::error::{Error, Result};
use crate::geometry::{project_box, NullSpec};
use crate::selection::{round_robin, ucb_select, SelectionRule, TermStats};

use super::MethodConfig;

pub const ETA_FLOOR: f64 = 1e-6;
const MAX_SENTINELS: usize = 8;

/// `f(η) = Σ_k Σ_i log(1 − c_ki + c_ki x_ki / η_k)` over recorded `(c, x)` pairs.
#[derive(Debug, Clone, Copy)]
pub struct InverseObjective<'a> {
    pub history: &'a [Vec<(f64, f64)>],
}

impl InverseObjective<'_> {
    pub fn value(&self, eta: &[f64]) -> f64 {
        self.history
            .iter()
            .zip(eta)
            .map(|(h, &e)| {
                let e = e.clamp(ETA_FLOOR, 1.0);
                h.iter().map(|&(c, x)| (1.0 - c + c * x / e).ln()).sum::<f64>()
            })
            .sum()
    }

    /// `∂f/∂η_k = −Σ_i c x / (η ((1 − c) η + c x))`.
    pub fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        self.history
            .iter()
            .zip(eta)
            .map(|(h, &e)| {
                let e = e.clamp(ETA_FLOOR, 1.0);
                -h.iter().map(|&(c, x)| c * x / (e * ((1.0 - c) * e + c * x))).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500, armijo: 1e-4, shrink: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub eta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient descent with Barzilai-Borwein steps and Armijo
/// backtracking along the projection arc, over the null polytope with
/// coordinates kept at or above `ETA_FLOOR`.
pub fn minimize_inverse(
    obj: &InverseObjective,
    spec: &NullSpec,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<Minimum> {
    let k = spec.k();
    if start.len() != k || obj.history.len() != k {
        return Err(Error::Dimension { expected: k, got: start.len() });
    }
    let project = |p: &[f64]| project_box(spec, p, ETA_FLOOR, 1.0);
    let mut eta = project(start)?;
    let mut f = obj.value(&eta);
    let mut g = obj.gradient(&eta);
    let mut step = 1.0 / norm(&g).max(1.0);
    let pg_norm = |eta: &[f64], g: &[f64]| -> Result<f64> {
        let full: Vec<f64> = eta.iter().zip(g).map(|(e, d)| e - d).collect();
        let p = project(&full)?;
        Ok(norm(&p.iter().zip(eta).map(|(a, b)| a - b).collect::<Vec<_>>()))
    };
    let mut gn = pg_norm(&eta, &g)?;
    for it in 0..opts.max_iter {
        if gn < opts.tol {
            return Ok(Minimum { eta, value: f, iterations: it, grad_norm: gn });
        }
        let mut s = step;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = eta.iter().zip(&g).map(|(e, d)| e - s * d).collect();
            let cand = project(&trial)?;
            let dir: f64 = cand.iter().zip(&eta).zip(&g).map(|((c, e), d)| (c - e) * d).sum();
            let fc = obj.value(&cand);
            if fc <= f + opts.armijo * dir {
                accepted = Some((cand, fc));
                break;
            }
            s *= opts.shrink;
        }
        let Some((cand, fc)) = accepted else {
            // no descent left at machine precision
            return Ok(Minimum { eta, value: f, iterations: it, grad_norm: gn });
        };
        let gc = obj.gradient(&cand);
        let sk: Vec<f64> = cand.iter().zip(&eta).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = sk.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = sk.iter().map(|a| a * a).sum();
        step = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { s * 2.0 };
        let moved = norm(&sk);
        eta = cand;
        f = fc;
        g = gc;
        gn = pg_norm(&eta, &g)?;
        // the Armijo test is below rounding noise in f: stalled at machine precision
        if moved <= 1e-15 * (1.0 + norm(&eta)) && gn >= opts.tol {
            return Ok(Minimum { eta, value: f, iterations: it + 1, grad_norm: gn });
        }
    }
    if gn < opts.tol * 1e3 {
        return Ok(Minimum { eta, value: f, iterations: opts.max_iter, grad_norm: gn });
    }
    Err(Error::NoConvergence { norm: gn })
}

#[derive(Debug, Clone)]
struct Sentinel {
    tracker: IntersectionTracker,
}

/// Convex UI-TS driven through one shared interleaving.
#[derive(Debug, Clone)]
pub struct ConvexProcedure {
    spec: NullSpec,
    l: f64,
    u: f64,
    selection: SelectionRule,
    log_thr: f64,
    cadence: usize,
    opts: SolverOptions,
    history: Vec<Vec<(f64, f64)>>,
    moments: Vec<MomentState>,
    t: usize,
    solved: f64,
    minimizer: Vec<f64>,
    sentinels: Vec<Sentinel>,
    latest: usize,
    rejected_at: Option<usize>,
    solves: usize,
    last: Option<(f64, f64)>,
}

impl ConvexProcedure {
    pub fn new(cfg: &MethodConfig, spec: &NullSpec, _sizes: &[usize]) -> Result<Self> {
        let BetRule::Inverse { l, u } = cfg.bets else {
            return Err(Error::Incompatible("convex needs inverse bets".into()));
        };
        let start = vec![spec.eta0; spec.k()];
        Ok(Self {
            spec: spec.clone(),
            l,
            u,
            selection: cfg.selection,
            log_thr: -cfg.alpha.ln(),
            cadence: cfg.cadence,
            opts: SolverOptions::default(),
            history: vec![Vec::new(); spec.k()],
            moments: vec![MomentState::new(); spec.k()],
            t: 0,
            solved: 0.0,
            minimizer: start.clone(),
            sentinels: vec![Sentinel { tracker: IntersectionTracker::new(start) }],
            latest: 0,
            rejected_at: None,
            solves: 0,
            last: None,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn counts(&self) -> Vec<usize> {
        self.history.iter().map(Vec::len).collect()
    }

    /// Running maximum of the minimized log I-TSM over the solve times.
    pub fn log_value(&self) -> f64 {
        self.solved
    }

    pub fn p_value(&self) -> f64 {
        p_value_from_log(self.solved)
    }

    pub fn rejected_at(&self) -> Option<usize> {
        self.rejected_at
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    pub fn solves(&self) -> usize {
        self.solves
    }

    pub fn last_bet(&self) -> (Option<f64>, Option<f64>) {
        match self.last {
            Some((eta, lambda)) => (Some(eta), Some(lambda)),
            None => (None, None),
        }
    }

    pub fn directive(&self) -> Option<usize> {
        let k = self.spec.k();
        let free = vec![false; k];
        match self.selection {
            SelectionRule::GreedyKelly if self.t > 0 => {
                let tr = &self.sentinels[self.latest].tracker;
                let stats: Vec<TermStats> = tr.strata.iter().map(|s| s.terms).collect();
                ucb_select(self.t + 1, &stats, &free)
            }
            _ => round_robin(self.t + 1, &free),
        }
    }

    pub fn observe(&mut self, k: usize, x: f64) -> Result<()> {
        let c = inverse_c(&self.moments[k], self.l, self.u);
        self.history[k].push((c, x));
        self.moments[k].update(x);
        for s in &mut self.sentinels {
            let eta = s.tracker.eta[k];
            s.tracker.observe(k, x, inverse_bet(c, eta), eta, self.log_thr)?;
        }
        self.t += 1;
        let m = self.minimizer[k].max(ETA_FLOOR);
        self.last = Some((m, c / m));
        let upper = self
            .sentinels
            .iter()
            .map(|s| s.tracker.log_value())
            .fold(f64::INFINITY, f64::min);
        if self.t.is_multiple_of(self.cadence) || upper >= self.log_thr {
            self.solve(upper)?;
        }
        if self.rejected_at.is_none() && self.solved >= self.log_thr {
            self.rejected_at = Some(self.t);
        }
        Ok(())
    }

    fn solve(&mut self, upper: f64) -> Result<()> {
        let obj = InverseObjective { history: &self.history };
        let min = minimize_inverse(&obj, &self.spec, &self.minimizer, &self.opts)?;
        self.solves += 1;
        self.solved = self.solved.max(min.value.min(upper));
        self.minimizer = min.eta.clone();
        let mut tracker = IntersectionTracker::new(min.eta);
        // replay in stratum order; the product does not depend on the interleaving
        for (k, h) in self.history.iter().enumerate() {
            for &(c, x) in h {
                let eta = tracker.eta[k];
                tracker.observe(k, x, inverse_bet(c, eta), eta, f64::INFINITY)?;
            }
        }
        if self.sentinels.len() >= MAX_SENTINELS {
            self.sentinels.remove(1);
        }
        self.sentinels.push(Sentinel { tracker });
        self.latest = self.sentinels.len() - 1;
        Ok(())
    }
}
