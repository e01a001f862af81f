//! UI-TS computation strategies and the LCB method, with stopping-time and
//! global sample size accounting.

mod convex;
mod lanes;
mod lcb;

pub use convex::{minimize_inverse, ConvexProcedure, InverseObjective, Minimum, SolverOptions};
pub use lanes::LaneSet;
pub use lcb::{LcbProcedure, LCB_GRID_STEP};

use serde::{Deserialize, Serialize};

use crate::bets::BetRule;
use crate::error::{Error, Result};
use crate::geometry::NullSpec;
use crate::population::{DrawSource, Mode};
use crate::selection::SelectionRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Lcb,
    BruteForce,
    Banded,
    Vertex,
    Convex,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Lcb => "lcb",
            Strategy::BruteForce => "brute_force",
            Strategy::Banded => "banded",
            Strategy::Vertex => "vertex",
            Strategy::Convex => "convex",
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_cadence() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub strategy: Strategy,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub bets: BetRule,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    /// Per-stratum value sets for brute force over the boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<Vec<f64>>>,
    /// Explicit intersection nulls for brute force, used instead of `support`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nulls: Option<Vec<Vec<f64>>>,
    /// Minimize the convex UI-TS every `cadence` draws.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
}

impl MethodConfig {
    pub fn new(strategy: Strategy, bets: BetRule, selection: SelectionRule) -> Self {
        Self {
            strategy,
            g: None,
            alpha: default_alpha(),
            bets,
            selection,
            cap: None,
            mode: Mode::WithReplacement,
            support: None,
            nulls: None,
            cadence: 1,
        }
    }

    pub fn with_g(mut self, g: usize) -> Self {
        self.g = Some(g);
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Short label such as `banded(G=10)/agrapa/round_robin`.
    pub fn label(&self) -> String {
        let s = match (self.strategy, self.g) {
            (Strategy::Banded, Some(g)) => format!("banded(G={g})"),
            (s, _) => s.name().to_string(),
        };
        format!("{s}/{}/{}", self.bets.name(), self.selection.name())
    }

    /// Checks the strategy, bet and selection combination for `k` strata.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Incompatible(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidParam("cadence must be positive".into()));
        }
        self.bets.validate(k)?;
        let sel = self.selection;
        if sel == SelectionRule::KellyOracle && !matches!(self.bets, BetRule::Kelly { .. }) {
            return bad("kelly_oracle selection needs kelly bets".into());
        }
        if sel == SelectionRule::VertexSweep && self.strategy != Strategy::Vertex {
            return bad("vertex_sweep selection only applies to the vertex strategy".into());
        }
        let wr = self.mode == Mode::WithReplacement;
        match self.strategy {
            Strategy::Lcb => {
                if sel != SelectionRule::RoundRobin {
                    return bad("lcb uses round-robin selection".into());
                }
            }
            Strategy::BruteForce => {
                if self.support.is_none() && self.nulls.is_none() {
                    return bad("brute_force needs a support or an explicit null list".into());
                }
            }
            Strategy::Banded => {
                if k != 2 {
                    return Err(Error::Unsupported(format!("banding needs K = 2, got K = {k}")));
                }
                if !self.g.is_some_and(|g| g >= 1) {
                    return bad("banded needs G ≥ 1".into());
                }
                if !wr {
                    return bad("banded runs sample with replacement".into());
                }
            }
            Strategy::Vertex => {
                if self.bets.eta_aware() || sel.eta_aware() {
                    return bad(format!(
                        "vertex needs η-oblivious bets and selections, got {} and {}",
                        self.bets.name(),
                        sel.name()
                    ));
                }
                if !wr {
                    return bad("vertex runs sample with replacement".into());
                }
            }
            Strategy::Convex => {
                if !matches!(self.bets, BetRule::Inverse { .. }) {
                    return bad(format!("convex needs inverse bets, got {}", self.bets.name()));
                }
                if sel.eta_aware() {
                    return bad(format!("convex needs η-oblivious selection, got {}", sel.name()));
                }
                if !wr {
                    return bad("convex runs sample with replacement".into());
                }
            }
        }
        Ok(())
    }
}

/// One draw of a single shared interleaving, with the state after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Absent when every null follows its own interleaving.
    pub stratum: Option<usize>,
    pub value: Option<f64>,
    /// Conditional null mean and bet at the current minimizer.
    pub eta_kt: Option<f64>,
    pub lambda: Option<f64>,
    pub log_m: f64,
    pub p_value: f64,
    pub lcb: Option<f64>,
    /// Global sample size so far.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UitsResult {
    /// First crossing time, or the time the run stopped.
    pub tau: usize,
    /// Sum over strata of the worst-case per-null depth.
    pub n_tau: usize,
    pub depths: Vec<usize>,
    pub rejected: bool,
    pub log_m: f64,
    pub p_value: f64,
    pub lcb: Option<f64>,
    pub trajectory: Vec<StepRecord>,
}

/// A running UI-TS or LCB procedure.
#[derive(Debug, Clone)]
pub enum Procedure {
    Lanes(LaneSet),
    Lcb(LcbProcedure),
    Convex(ConvexProcedure),
}

impl Procedure {
    /// `sizes` are the stratum sizes; the null's weights come from `spec`.
    pub fn new(cfg: &MethodConfig, spec: &NullSpec, sizes: &[usize]) -> Result<Self> {
        if sizes.len() != spec.k() {
            return Err(Error::Dimension { expected: spec.k(), got: sizes.len() });
        }
        cfg.validate(spec.k())?;
        Ok(match cfg.strategy {
            Strategy::Lcb => Procedure::Lcb(LcbProcedure::new(cfg, spec, sizes)?),
            Strategy::Convex => Procedure::Convex(ConvexProcedure::new(cfg, spec, sizes)?),
            _ => Procedure::Lanes(LaneSet::new(cfg, spec, sizes)?),
        })
    }

    /// Whether every null sees the same interleaving, so that draws can be
    /// directed one at a time.
    pub fn shared(&self) -> bool {
        match self {
            Procedure::Lanes(l) => l.shared(),
            _ => true,
        }
    }

    /// The stratum to sample next, fixed before the value is seen.
    pub fn directive(&self) -> Option<usize> {
        match self {
            Procedure::Lanes(l) => l.directive(),
            Procedure::Lcb(l) => l.directive(),
            Procedure::Convex(c) => c.directive(),
        }
    }

    /// Feeds the value drawn from the directed stratum.
    pub fn observe(&mut self, k: usize, x: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&x) || x.is_nan() {
            return Err(Error::OutOfRange(x));
        }
        match self.directive() {
            Some(d) if d == k => {}
            Some(d) => {
                return Err(Error::InvalidParam(format!(
                    "draw from stratum {} but stratum {} was directed",
                    k + 1,
                    d + 1
                )))
            }
            None => return Err(Error::AllExhausted),
        }
        match self {
            Procedure::Lanes(l) => l.observe(k, x),
            Procedure::Lcb(l) => l.observe(k, x),
            Procedure::Convex(c) => c.observe(k, x),
        }
    }

    /// One time step against a source of draws; false when nothing could be drawn.
    pub fn advance(&mut self, src: &mut dyn DrawSource) -> Result<bool> {
        if let Procedure::Lanes(l) = self {
            if !l.shared() {
                return l.advance_aware(src);
            }
        }
        let Some(k) = self.directive() else {
            return Ok(false);
        };
        let i = self.counts()[k];
        let x = src.value(k, i)?;
        self.observe(k, x)?;
        Ok(true)
    }

    pub fn t(&self) -> usize {
        match self {
            Procedure::Lanes(l) => l.t(),
            Procedure::Lcb(l) => l.t(),
            Procedure::Convex(c) => c.t(),
        }
    }

    /// Per-stratum worst-case depth over the nulls.
    pub fn counts(&self) -> Vec<usize> {
        match self {
            Procedure::Lanes(l) => l.counts(),
            Procedure::Lcb(l) => l.counts(),
            Procedure::Convex(c) => c.counts(),
        }
    }

    /// Global sample size so far.
    pub fn n(&self) -> usize {
        self.counts().iter().sum()
    }

    /// Log of the UI-TS; for LCB, minus the log of the P-value.
    pub fn log_value(&self) -> f64 {
        match self {
            Procedure::Lanes(l) => l.log_value(),
            Procedure::Lcb(l) => -l.p_value().ln(),
            Procedure::Convex(c) => c.log_value(),
        }
    }

    pub fn p_value(&self) -> f64 {
        match self {
            Procedure::Lanes(l) => l.p_value(),
            Procedure::Lcb(l) => l.p_value(),
            Procedure::Convex(c) => c.p_value(),
        }
    }

    pub fn lcb(&self) -> Option<f64> {
        match self {
            Procedure::Lcb(l) => Some(l.bound()),
            _ => None,
        }
    }

    pub fn rejected_at(&self) -> Option<usize> {
        match self {
            Procedure::Lanes(l) => l.rejected_at(),
            Procedure::Lcb(l) => l.rejected_at(),
            Procedure::Convex(c) => c.rejected_at(),
        }
    }

    /// Keep what is needed to report a P-value after every draw. Only LCB
    /// does extra work for this.
    pub fn set_record(&mut self, on: bool) {
        if let Procedure::Lcb(l) = self {
            l.set_record(on);
        }
    }

    /// Bet and conditional null mean behind the latest draw, at the minimizer.
    pub fn last_bet(&self) -> (Option<f64>, Option<f64>) {
        match self {
            Procedure::Lanes(l) => l.last_bet(),
            Procedure::Lcb(l) => l.last_bet(),
            Procedure::Convex(c) => c.last_bet(),
        }
    }

    pub fn record(&self, stratum: Option<usize>, value: Option<f64>) -> StepRecord {
        let (eta_kt, lambda) = self.last_bet();
        StepRecord {
            t: self.t(),
            stratum,
            value,
            eta_kt,
            lambda,
            log_m: self.log_value(),
            p_value: self.p_value(),
            lcb: self.lcb(),
            n: self.n(),
        }
    }
}

/// Default sample cap: the population size.
pub fn default_cap(sizes: &[usize]) -> usize {
    sizes.iter().sum()
}

/// Stopping bookkeeping without the end-of-run P-value and bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stopping {
    pub tau: usize,
    pub n_tau: usize,
    pub depths: Vec<usize>,
    pub rejected: bool,
}

fn drive(
    cfg: &MethodConfig,
    spec: &NullSpec,
    sizes: &[usize],
    src: &mut dyn DrawSource,
    record: bool,
) -> Result<(Procedure, Stopping, Vec<StepRecord>)> {
    let mut proc = Procedure::new(cfg, spec, sizes)?;
    proc.set_record(record);
    let cap = cfg.cap.unwrap_or_else(|| default_cap(sizes));
    let mut trajectory = Vec::new();
    while proc.rejected_at().is_none() && proc.n() < cap {
        let k = if proc.shared() { proc.directive() } else { None };
        if !proc.advance(src)? {
            break;
        }
        if record {
            let value = k.and_then(|k| proc_value(&proc, k, src));
            trajectory.push(proc.record(k, value));
        }
    }
    let counts = proc.counts();
    let n = counts.iter().sum::<usize>();
    // a crossing that needed more than the budget does not count
    let rejected = proc.rejected_at().is_some() && n <= cap;
    let stop = Stopping {
        tau: if rejected { proc.rejected_at().unwrap_or(proc.t()) } else { proc.t() },
        n_tau: if rejected { n } else { n.min(cap) },
        depths: counts,
        rejected,
    };
    Ok((proc, stop, trajectory))
}

/// Runs a procedure until it rejects, hits the cap on the global sample size,
/// or runs out of draws.
pub fn run(
    cfg: &MethodConfig,
    spec: &NullSpec,
    sizes: &[usize],
    src: &mut dyn DrawSource,
    record: bool,
) -> Result<UitsResult> {
    let (proc, stop, trajectory) = drive(cfg, spec, sizes, src, record)?;
    Ok(UitsResult {
        tau: stop.tau,
        n_tau: stop.n_tau,
        depths: stop.depths,
        rejected: stop.rejected,
        log_m: proc.log_value(),
        p_value: proc.p_value(),
        lcb: proc.lcb(),
        trajectory,
    })
}

/// Like [`run`], for callers that only need the stopping time and decision;
/// skips the LCB P-value, which costs a pass over every grid path.
pub fn decide(
    cfg: &MethodConfig,
    spec: &NullSpec,
    sizes: &[usize],
    src: &mut dyn DrawSource,
) -> Result<Stopping> {
    drive(cfg, spec, sizes, src, false).map(|(_, stop, _)| stop)
}

fn proc_value(proc: &Procedure, k: usize, src: &mut dyn DrawSource) -> Option<f64> {
    let i = proc.counts()[k].checked_sub(1)?;
    src.value(k, i).ok()
}

/// `(τ, n_τ, rejected)`.
pub fn stopping_summary(result: &UitsResult) -> (usize, usize, bool) {
    (result.tau, result.n_tau, result.rejected)
}
