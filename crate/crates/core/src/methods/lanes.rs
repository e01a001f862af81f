//! Brute-force, banded and vertex strategies. Each lane holds the I-TSMs
//! that share one set of bets and selections.
//!
//! Brute force covers every boundary null, so its UI-TS is the smallest
//! running maximum. A vertex or banded lane only sees the corners of its
//! piece of the null polytope; the minimum over the piece sits at one of them
//! at each fixed time, but not uniformly over time, so such a lane keeps the
//! running maximum of its pointwise minimum, and the UI-TS is the smallest of
//! those.

use crate::bets::BetRule;
use crate::engine::{p_value_from_log, IntersectionTracker};
use crate::error::{Error, Result};
use crate::geometry::{band_grid, enumerate_boundary, enumerate_vertices, DiscreteSupport, NullSpec};
use crate::population::{DrawSource, Mode};
use crate::selection::{round_robin, ucb_select, SelectionRule, TermStats};

use super::{MethodConfig, Strategy};

#[derive(Debug, Clone)]
struct Lane {
    /// Tracker at the point bets are tuned for, when it is not an evaluation point.
    tune: Option<IntersectionTracker>,
    /// Per-stratum largest null mean the tuned bet must stay valid for.
    cap_ref: Option<Vec<f64>>,
    evals: Vec<IntersectionTracker>,
    counts: Vec<usize>,
    active: bool,
    /// Evaluate the lane as one piece: running max of the minimum over `evals`.
    pointwise: bool,
    /// Log of that running max.
    best: f64,
}

struct Ctx<'a> {
    bet: &'a BetRule,
    sizes: &'a [usize],
    mode: Mode,
    alpha: f64,
    log_thr: f64,
}

impl Lane {
    fn direct(evals: Vec<Vec<f64>>, k: usize) -> Self {
        Lane {
            tune: None,
            cap_ref: None,
            evals: evals.into_iter().map(IntersectionTracker::new).collect(),
            counts: vec![0; k],
            active: true,
            pointwise: false,
            best: 0.0,
        }
    }

    fn selector(&self) -> &IntersectionTracker {
        self.tune.as_ref().unwrap_or(&self.evals[0])
    }

    fn update(&mut self, k: usize, x: f64, cx: &Ctx) -> Result<()> {
        let tuned = self.tune.as_ref().map(|tr| {
            let eta = tr.eta_kt(k, cx.sizes, cx.mode);
            let mut lambda = cx.bet.lambda(k, &tr.strata[k].moments, eta, cx.alpha);
            if let Some(c) = &self.cap_ref {
                if c[k] > 0.0 {
                    lambda = lambda.min(cx.bet.cap_factor() / c[k]);
                    if cx.bet.cap_factor() >= 1.0 && cx.bet.eta_aware() {
                        // rules that may stake everything bet what they would at the top endpoint
                        let top = self.evals.iter().map(|e| e.eta_kt(k, cx.sizes, cx.mode)).fold(0.0, f64::max);
                        lambda = lambda.min(cx.bet.lambda(k, &tr.strata[k].moments, top, cx.alpha));
                    }
                }
            }
            (eta, lambda)
        });
        let oblivious = match tuned {
            Some((_, l)) => Some(l),
            None if !cx.bet.eta_aware() => {
                Some(cx.bet.lambda(k, &self.evals[0].strata[k].moments, 1.0, cx.alpha))
            }
            None => None,
        };
        for ev in &mut self.evals {
            let eta = ev.eta_kt(k, cx.sizes, cx.mode);
            let lambda = match oblivious {
                Some(l) => l,
                None => cx.bet.lambda(k, &ev.strata[k].moments, eta, cx.alpha),
            };
            ev.observe(k, x, lambda, eta, cx.log_thr)?;
        }
        if let (Some(tr), Some((eta, lambda))) = (&mut self.tune, tuned) {
            tr.observe(k, x, lambda, eta, cx.log_thr)?;
        }
        self.counts[k] += 1;
        if self.pointwise {
            let m = self.evals.iter().map(IntersectionTracker::log_value).fold(f64::INFINITY, f64::min);
            self.best = self.best.max(m);
            self.active = self.best < cx.log_thr;
        } else {
            self.active = self.evals.iter().any(|e| e.log_running_max() < cx.log_thr);
        }
        Ok(())
    }
}

/// A set of lanes driven either through one shared interleaving or, for
/// η-aware selection, through one interleaving per lane.
#[derive(Debug, Clone)]
pub struct LaneSet {
    lanes: Vec<Lane>,
    bet: BetRule,
    selection: SelectionRule,
    sizes: Vec<usize>,
    mode: Mode,
    alpha: f64,
    log_thr: f64,
    shared: bool,
    /// Lanes are evaluated as pieces rather than null by null.
    pointwise: bool,
    t: usize,
    shared_counts: Vec<usize>,
    rejected_at: Option<usize>,
    argmin: (usize, usize),
    log_value: f64,
}

impl LaneSet {
    pub fn new(cfg: &MethodConfig, spec: &NullSpec, sizes: &[usize]) -> Result<Self> {
        let k = spec.k();
        let lanes = match cfg.strategy {
            Strategy::BruteForce => {
                let nulls = match (&cfg.nulls, &cfg.support) {
                    (Some(n), _) => {
                        for eta in n {
                            if eta.len() != k {
                                return Err(Error::Dimension { expected: k, got: eta.len() });
                            }
                            if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
                                return Err(Error::InvalidParam(format!(
                                    "null {eta:?} leaves [0, 1]"
                                )));
                            }
                        }
                        n.clone()
                    }
                    (None, Some(s)) => {
                        let support = DiscreteSupport::new(s.clone(), sizes.to_vec())?;
                        enumerate_boundary(spec, &support)?
                    }
                    (None, None) => {
                        return Err(Error::Incompatible("brute_force needs nulls".into()))
                    }
                };
                if nulls.is_empty() {
                    return Err(Error::InvalidSpec("no intersection nulls to test".into()));
                }
                nulls.into_iter().map(|eta| Lane::direct(vec![eta], k)).collect()
            }
            Strategy::Vertex => vec![Lane::direct(enumerate_vertices(spec)?, k)],
            Strategy::Banded => {
                let g = cfg.g.unwrap_or(1);
                band_grid(spec, g)?
                    .into_iter()
                    .map(|band| {
                        let cap_ref = (0..k)
                            .map(|j| band.endpoints[0][j].max(band.endpoints[1][j]))
                            .collect();
                        let mut lane = Lane::direct(band.endpoints.to_vec(), k);
                        lane.tune = Some(IntersectionTracker::new(band.anchor));
                        lane.cap_ref = Some(cap_ref);
                        lane
                    })
                    .collect()
            }
            s => return Err(Error::Incompatible(format!("{} is not a lane strategy", s.name()))),
        };
        let pointwise = cfg.strategy != Strategy::BruteForce;
        let mut lanes = lanes;
        for lane in &mut lanes {
            lane.pointwise = pointwise;
        }
        Ok(Self {
            lanes,
            bet: cfg.bets.clone(),
            selection: cfg.selection,
            sizes: sizes.to_vec(),
            mode: cfg.mode,
            alpha: cfg.alpha,
            log_thr: -cfg.alpha.ln(),
            shared: !cfg.selection.eta_aware(),
            pointwise,
            t: 0,
            shared_counts: vec![0; k],
            rejected_at: None,
            argmin: (0, 0),
            log_value: 0.0,
        })
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of intersection nulls evaluated.
    pub fn null_count(&self) -> usize {
        self.lanes.iter().map(|l| l.evals.len()).sum()
    }

    pub fn counts(&self) -> Vec<usize> {
        if self.shared {
            return self.shared_counts.clone();
        }
        let k = self.sizes.len();
        (0..k).map(|j| self.lanes.iter().map(|l| l.counts[j]).max().unwrap_or(0)).collect()
    }

    pub fn log_value(&self) -> f64 {
        self.log_value
    }

    pub fn p_value(&self) -> f64 {
        p_value_from_log(self.log_value)
    }

    pub fn rejected_at(&self) -> Option<usize> {
        self.rejected_at
    }

    /// The intersection null with the smallest running maximum, or with the
    /// smallest current value under pointwise evaluation.
    pub fn minimizer(&self) -> &IntersectionTracker {
        &self.lanes[self.argmin.0].evals[self.argmin.1]
    }

    pub fn last_bet(&self) -> (Option<f64>, Option<f64>) {
        match self.minimizer().last {
            Some((_, eta, lambda)) => (Some(eta), Some(lambda)),
            None => (None, None),
        }
    }

    fn exhausted(&self, counts: &[usize]) -> Vec<bool> {
        match self.mode {
            Mode::WithReplacement => vec![false; counts.len()],
            Mode::WithoutReplacement => counts.iter().zip(&self.sizes).map(|(c, n)| c >= n).collect(),
        }
    }

    pub fn directive(&self) -> Option<usize> {
        if !self.shared {
            return None;
        }
        let exhausted = self.exhausted(&self.shared_counts);
        let t = self.t + 1;
        match self.selection {
            SelectionRule::GreedyKelly if self.t > 0 => {
                let stats: Vec<TermStats> = self.minimizer().strata.iter().map(|s| s.terms).collect();
                ucb_select(t, &stats, &exhausted)
            }
            SelectionRule::VertexSweep => {
                let open = self
                    .lanes
                    .iter()
                    .flat_map(|l| l.evals.iter())
                    .find(|e| self.level(e) < self.log_thr);
                match open {
                    Some(e) => e.select(
                        SelectionRule::VertexSweep,
                        &self.bet,
                        &exhausted,
                        &self.sizes,
                        self.mode,
                        self.alpha,
                    ),
                    None => round_robin(t, &exhausted),
                }
            }
            _ => round_robin(t, &exhausted),
        }
    }

    pub fn observe(&mut self, k: usize, x: f64) -> Result<()> {
        let cx = Ctx {
            bet: &self.bet,
            sizes: &self.sizes,
            mode: self.mode,
            alpha: self.alpha,
            log_thr: self.log_thr,
        };
        for lane in self.lanes.iter_mut().filter(|l| l.active) {
            lane.update(k, x, &cx)?;
        }
        self.shared_counts[k] += 1;
        self.finish_step();
        Ok(())
    }

    /// One step in which every lane selects and draws on its own.
    pub fn advance_aware(&mut self, src: &mut dyn DrawSource) -> Result<bool> {
        let cx = Ctx {
            bet: &self.bet,
            sizes: &self.sizes,
            mode: self.mode,
            alpha: self.alpha,
            log_thr: self.log_thr,
        };
        let mut progressed = false;
        for lane in &mut self.lanes {
            let exhausted: Vec<bool> = match self.mode {
                Mode::WithReplacement => vec![false; lane.counts.len()],
                Mode::WithoutReplacement => {
                    lane.counts.iter().zip(cx.sizes).map(|(c, n)| c >= n).collect()
                }
            };
            let pick = lane.selector().select(
                self.selection,
                cx.bet,
                &exhausted,
                cx.sizes,
                cx.mode,
                cx.alpha,
            );
            if let Some(k) = pick {
                let x = src.value(k, lane.counts[k])?;
                lane.update(k, x, &cx)?;
                progressed = true;
            }
        }
        if progressed {
            self.finish_step();
        }
        Ok(progressed)
    }

    fn level(&self, e: &IntersectionTracker) -> f64 {
        if self.pointwise {
            e.log_value()
        } else {
            e.log_running_max()
        }
    }

    fn finish_step(&mut self) {
        self.t += 1;
        if self.pointwise {
            let mut best: Option<(usize, f64)> = None;
            for (li, lane) in self.lanes.iter().enumerate() {
                if best.is_none_or(|(_, b)| lane.best < b) {
                    best = Some((li, lane.best));
                }
            }
            if let Some((li, v)) = best {
                let evals = &self.lanes[li].evals;
                let ei = (0..evals.len())
                    .min_by(|&a, &b| evals[a].log_value().total_cmp(&evals[b].log_value()))
                    .unwrap_or(0);
                self.argmin = (li, ei);
                self.log_value = v;
            }
            if self.rejected_at.is_none() && self.log_value >= self.log_thr {
                self.rejected_at = Some(self.t);
            }
            return;
        }
        let mut best: Option<((usize, usize), f64, f64)> = None;
        let any_active = self.lanes.iter().any(|l| l.active);
        for (li, lane) in self.lanes.iter().enumerate() {
            if any_active && !lane.active {
                continue;
            }
            for (ei, ev) in lane.evals.iter().enumerate() {
                let key = (ev.log_running_max(), ev.log_value());
                let better = match best {
                    None => true,
                    Some((_, m, v)) => key.0 < m || (key.0 == m && key.1 < v),
                };
                if better {
                    best = Some(((li, ei), key.0, key.1));
                }
            }
        }
        if let Some((idx, m, _)) = best {
            self.argmin = idx;
            self.log_value = m;
        }
        if self.rejected_at.is_none() && self.log_value >= self.log_thr {
            self.rejected_at = Some(self.t);
        }
    }
}
