//! Browser bindings. Each export returns JSON text; the plain functions
//! behind them are usable (and tested) off the web.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use strat_anytime::audit::AuditSetup;
use strat_anytime::bets::{BetRule, Family};
use strat_anytime::geometry::NullSpec;
use strat_anytime::methods::{run, MethodConfig, Procedure, StepRecord};
use strat_anytime::oracle;
use strat_anytime::population::{Mode, StratifiedPopulation, StreamSet};

type Out<T> = Result<T, String>;

fn to_json<T: Serialize>(v: &T) -> Out<String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OracleView {
    eta_star: f64,
    optimal: Option<oracle::OptimalStopping>,
    gain: Option<oracle::StratificationGain>,
    note: Option<String>,
}

pub fn oracle_report(mu1: f64, mu2: f64, alpha: f64) -> Out<String> {
    let optimal = oracle::pointmass_optimal_stopping(mu1, mu2, alpha);
    let note = optimal.as_ref().err().map(|e| e.to_string());
    to_json(&OracleView {
        eta_star: oracle::pointmass_eta_star(mu1, mu2),
        optimal: optimal.ok(),
        gain: oracle::stratification_gain(mu1, mu2, alpha).ok(),
        note,
    })
}

#[derive(Serialize)]
struct RunView {
    tau: usize,
    n_tau: usize,
    rejected: bool,
    p_values: Vec<f64>,
    strata: Vec<Option<usize>>,
}

/// Runs a method on two point-mass strata of equal weight. `bets` is one of
/// `agrapa`, `kelly`, `inverse`, `shrink_trunc`; `selection` is a selection
/// rule name such as `round_robin`.
pub fn point_mass_run(mu1: f64, mu2: f64, g: usize, bets: &str, selection: &str, cap: usize) -> Out<String> {
    let rule = match bets {
        "agrapa" => BetRule::Agrapa { c: 0.75 },
        "kelly" => BetRule::Kelly { family: Family::PointMass, means: vec![mu1, mu2] },
        "inverse" => BetRule::Inverse { l: 0.1, u: 0.9 },
        "shrink_trunc" => BetRule::ShrinkTrunc { d: 20.0 },
        other => return Err(format!("unknown bet rule {other}")),
    };
    let selection = serde_json::from_value(serde_json::Value::String(selection.into()))
        .map_err(|_| format!("unknown selection {selection}"))?;
    let cfg = MethodConfig::new(strat_anytime::methods::Strategy::Banded, rule, selection)
        .with_g(g)
        .with_cap(cap);
    let pop = StratifiedPopulation::new(vec![vec![mu1], vec![mu2]]).map_err(|e| e.to_string())?;
    let spec = NullSpec::new(vec![0.5, 0.5], 0.5).map_err(|e| e.to_string())?;
    cfg.validate(2).map_err(|e| e.to_string())?;
    let mut src = StreamSet::new(&pop, Mode::WithReplacement, 0, 0);
    let res = run(&cfg, &spec, &pop.sizes(), &mut src, true).map_err(|e| e.to_string())?;
    to_json(&RunView {
        tau: res.tau,
        n_tau: res.n_tau,
        rejected: res.rejected,
        p_values: res.trajectory.iter().map(|s| s.p_value).collect(),
        strata: res.trajectory.iter().map(|s| s.stratum.map(|k| k + 1)).collect(),
    })
}

/// An audit driven by hand: the page shows the directed stratum and the
/// user types the value drawn from it.
pub struct Audit {
    proc: Procedure,
    mode: Mode,
    sizes: Vec<usize>,
    steps: Vec<StepRecord>,
}

#[derive(Serialize)]
struct AuditView<'a> {
    /// 1-based; absent once the audit has stopped.
    directive: Option<usize>,
    t: usize,
    p_value: f64,
    lcb: Option<f64>,
    rejected: bool,
    /// Strata here are 0-based.
    steps: &'a [StepRecord],
}

impl Audit {
    pub fn new(setup_json: &str) -> Out<Self> {
        let setup: AuditSetup = serde_json::from_str(setup_json).map_err(|e| e.to_string())?;
        let spec = setup.check().map_err(|e| e.to_string())?;
        let mut proc = Procedure::new(&setup.method, &spec, &setup.sizes).map_err(|e| e.to_string())?;
        proc.set_record(true);
        Ok(Self { proc, mode: setup.method.mode, sizes: setup.sizes, steps: Vec::new() })
    }

    pub fn directive(&self) -> Option<usize> {
        if self.proc.rejected_at().is_some() {
            return None;
        }
        let k = self.proc.directive()?;
        if self.mode == Mode::WithoutReplacement && self.proc.counts()[k] >= self.sizes[k] {
            return None;
        }
        Some(k + 1)
    }

    pub fn submit(&mut self, value: f64) -> Out<String> {
        let k = self.directive().ok_or("the audit has stopped")? - 1;
        if !(0.0..=1.0).contains(&value) {
            return Err(format!("value {value} is outside [0, 1]"));
        }
        self.proc.observe(k, value).map_err(|e| e.to_string())?;
        self.steps.push(self.proc.record(Some(k), Some(value)));
        self.state()
    }

    pub fn state(&self) -> Out<String> {
        to_json(&AuditView {
            directive: self.directive(),
            t: self.proc.t(),
            p_value: self.proc.p_value(),
            lcb: self.proc.lcb(),
            rejected: self.proc.rejected_at().is_some(),
            steps: &self.steps,
        })
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = oracle)]
pub fn oracle_js(mu1: f64, mu2: f64, alpha: f64) -> Result<String, JsError> {
    oracle_report(mu1, mu2, alpha).map_err(js)
}

#[wasm_bindgen(js_name = pointMassRun)]
pub fn point_mass_run_js(mu1: f64, mu2: f64, g: usize, bets: &str, selection: &str, cap: usize) -> Result<String, JsError> {
    point_mass_run(mu1, mu2, g, bets, selection, cap).map_err(js)
}

#[wasm_bindgen(js_name = LiveAudit)]
pub struct LiveAudit(Audit);

#[wasm_bindgen(js_class = LiveAudit)]
impl LiveAudit {
    #[wasm_bindgen(constructor)]
    pub fn new(setup_json: &str) -> Result<LiveAudit, JsError> {
        Audit::new(setup_json).map(LiveAudit).map_err(js)
    }

    /// 1-based stratum to draw next, or 0 once stopped.
    pub fn directive(&self) -> usize {
        self.0.directive().unwrap_or(0)
    }

    pub fn submit(&mut self, value: f64) -> Result<String, JsError> {
        self.0.submit(value).map_err(js)
    }

    pub fn state(&self) -> Result<String, JsError> {
        self.0.state().map_err(js)
    }
}
