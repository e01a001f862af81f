//! Betting rules. Every rule is a pure function of moments computed from
//! draws strictly before the one being bet on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior variance and pseudo-count behind the regularized variance.
const PRIOR_VARIANCE: f64 = 0.25;
const VARIANCE_FLOOR: f64 = 1e-8;

/// Lagged running moments of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentState {
    pub n: usize,
    pub sum: f64,
    sq_resid: f64,
}

impl MomentState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lagged mean; 1/2 before any data.
    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.5
        } else {
            self.sum / self.n as f64
        }
    }

    /// `(Σ (x_i - μ̂_{i-1})² + 1/4) / (n + 1)`, floored.
    pub fn variance(&self) -> f64 {
        ((self.sq_resid + PRIOR_VARIANCE) / (self.n as f64 + 1.0)).max(VARIANCE_FLOOR)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn update(&mut self, x: f64) {
        let r = x - self.mean();
        self.sq_resid += r * r;
        self.sum += x;
        self.n += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PointMass,
    Bernoulli,
}

fn default_c() -> f64 {
    0.75
}
fn default_l() -> f64 {
    0.1
}
fn default_u() -> f64 {
    0.9
}
fn default_d() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BetRule {
    Fixed {
        lambda: f64,
    },
    Agrapa {
        #[serde(default = "default_c")]
        c: f64,
    },
    Plugin {
        #[serde(default)]
        alpha: Option<f64>,
    },
    Inverse {
        #[serde(default = "default_l")]
        l: f64,
        #[serde(default = "default_u")]
        u: f64,
    },
    ShrinkTrunc {
        #[serde(default = "default_d")]
        d: f64,
    },
    /// Uses the true stratum means; only meaningful in simulation. Empty
    /// means are filled in from the population by the harness.
    Kelly {
        family: Family,
        #[serde(default)]
        means: Vec<f64>,
    },
}

impl BetRule {
    pub fn name(&self) -> &'static str {
        match self {
            BetRule::Fixed { .. } => "fixed",
            BetRule::Agrapa { .. } => "agrapa",
            BetRule::Plugin { .. } => "plugin",
            BetRule::Inverse { .. } => "inverse",
            BetRule::ShrinkTrunc { .. } => "shrink_trunc",
            BetRule::Kelly { .. } => "kelly",
        }
    }

    /// Whether the bet depends on the null being tested.
    pub fn eta_aware(&self) -> bool {
        !matches!(self, BetRule::Fixed { .. } | BetRule::Plugin { .. })
    }

    /// Factor `f` such that the rule never bets more than `f / η`.
    pub fn cap_factor(&self) -> f64 {
        match self {
            BetRule::Agrapa { c } => *c,
            BetRule::Inverse { u, .. } => *u,
            _ => 1.0,
        }
    }

    /// Rules whose stratum TSM is non-increasing in the null mean.
    pub fn monotone_in_eta(&self) -> bool {
        matches!(self, BetRule::Fixed { .. } | BetRule::Plugin { .. } | BetRule::Inverse { .. })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        match self {
            BetRule::Fixed { lambda } if !(0.0..=1.0).contains(lambda) => {
                bad(format!("fixed bet {lambda} must lie in [0, 1]"))
            }
            BetRule::Agrapa { c } if !(*c > 0.0 && *c <= 1.0) => {
                bad(format!("cap factor c = {c} must lie in (0, 1]"))
            }
            BetRule::Plugin { alpha: Some(a) } if !(*a > 0.0 && *a < 1.0) => {
                bad(format!("plug-in alpha {a} must lie in (0, 1)"))
            }
            BetRule::Inverse { l, u } if !(0.0 <= *l && l <= u && *u < 1.0) => {
                bad(format!("inverse limits need 0 ≤ l ≤ u < 1, got l = {l}, u = {u}"))
            }
            BetRule::ShrinkTrunc { d } if !(*d > 0.0 && d.is_finite()) => {
                bad(format!("anchor d = {d} must be positive"))
            }
            BetRule::Kelly { means, .. } if means.len() != k => {
                bad(format!("Kelly bets need {k} stratum means, got {}", means.len()))
            }
            BetRule::Kelly { means, .. } if means.iter().any(|m| !(0.0..=1.0).contains(m)) => {
                bad("Kelly means must lie in [0, 1]".into())
            }
            _ => Ok(()),
        }
    }

    /// The bet on the next draw from stratum `k` against conditional null
    /// mean `eta`. May be `+∞` when `eta` is 0 and the rule bets `1/η`.
    pub fn lambda(&self, k: usize, m: &MomentState, eta: f64, alpha: f64) -> f64 {
        match self {
            BetRule::Fixed { lambda } => {
                if eta > 0.0 {
                    lambda.min(1.0 / eta)
                } else {
                    *lambda
                }
            }
            BetRule::Agrapa { c } => agrapa_bet(m.mean(), m.variance(), eta, *c),
            BetRule::Plugin { alpha: a } => plugin_bet(m.variance(), m.n + 1, a.unwrap_or(alpha)),
            BetRule::Inverse { l, u } => {
                if eta >= 1.0 {
                    0.0
                } else {
                    inverse_bet(inverse_c(m, *l, *u), eta)
                }
            }
            BetRule::ShrinkTrunc { d } => shrink_trunc_bet(m.sum, m.n, eta, *d),
            BetRule::Kelly { family, means } => kelly_oracle_bet(*family, means[k], eta),
        }
    }
}

/// `clamp((μ̂ − η)/(σ̂² + (μ̂ − η)²), 0, c/η)`.
pub fn agrapa_bet(mean: f64, variance: f64, eta: f64, c: f64) -> f64 {
    let gap = mean - eta;
    let raw = gap / (variance + gap * gap);
    if raw <= 0.0 || !raw.is_finite() {
        return 0.0;
    }
    if eta > 0.0 {
        raw.min(c / eta)
    } else {
        raw
    }
}

/// η-oblivious predictable plug-in bet, truncated to `[0, 1]`. `t` is the
/// index of the draw within its stratum; values below 2 are raised to 2.
pub fn plugin_bet(variance: f64, t: usize, alpha: f64) -> f64 {
    let t = t.max(2) as f64;
    let raw = (2.0 * (2.0 / alpha).ln() / (variance.max(VARIANCE_FLOOR) * t * t.ln())).sqrt();
    raw.min(1.0)
}

/// The η-free factor of the inverse bet: `clamp(μ̂ − σ̂, l, u)`.
pub fn inverse_c(m: &MomentState, l: f64, u: f64) -> f64 {
    (m.mean() - m.sd()).clamp(l, u)
}

pub fn inverse_bet(c: f64, eta: f64) -> f64 {
    if eta > 0.0 {
        c / eta
    } else {
        f64::INFINITY
    }
}

/// Shrunk and truncated mean estimate mapped to the Bernoulli bet
/// `(μ̂/η − 1)/(1 − η)`.
pub fn shrink_trunc_bet(sum: f64, n: usize, eta: f64, d: f64) -> f64 {
    if eta >= 1.0 {
        return 0.0;
    }
    let prior = (eta + 1.0) / 2.0;
    let shrunk = (d * prior + sum) / (d + n as f64);
    let floor = eta + 1.0 / (2.0 * (d + n as f64 - 1.0).max(f64::EPSILON).sqrt());
    // just below 1, so a single zero cannot ruin the bettor
    let estimate = shrunk.max(floor).min(1.0 - f64::EPSILON);
    if eta <= 0.0 {
        return if estimate > 0.0 { f64::INFINITY } else { 0.0 };
    }
    ((estimate / eta - 1.0) / (1.0 - eta)).clamp(0.0, 1.0 / eta)
}

pub fn kelly_oracle_bet(family: Family, mu: f64, eta: f64) -> f64 {
    if eta >= 1.0 {
        return 0.0;
    }
    if eta <= 0.0 {
        return if mu > 0.0 { f64::INFINITY } else { 0.0 };
    }
    match family {
        Family::PointMass => {
            if mu > eta {
                1.0 / eta
            } else {
                0.0
            }
        }
        Family::Bernoulli => ((mu / eta - 1.0) / (1.0 - eta)).clamp(0.0, 1.0 / eta),
    }
}

/// Expected log growth `E log(1 + λ(X − η))` for a point mass or Bernoulli
/// with mean `mu`.
pub fn expected_log_growth(family: Family, mu: f64, eta: f64, lambda: f64) -> f64 {
    let g = |x: f64| -> f64 {
        if lambda.is_infinite() {
            return if x > eta { f64::INFINITY } else if x == eta { 0.0 } else { f64::NEG_INFINITY };
        }
        (lambda * (x - eta)).ln_1p()
    };
    match family {
        Family::PointMass => g(mu),
        Family::Bernoulli => {
            let hi = if mu > 0.0 { mu * g(1.0) } else { 0.0 };
            let lo = if mu < 1.0 { (1.0 - mu) * g(0.0) } else { 0.0 };
            hi + lo
        }
    }
}

/// Kelly bet for an unstratified draw from two equal strata of point masses
/// against the null mean 1/2.
pub fn kelly_twopoint_unstratified_bet(mu1: f64, mu2: f64) -> f64 {
    let (a, b) = (mu1 - 0.5, mu2 - 0.5);
    if a >= 0.0 && b >= 0.0 {
        2.0
    } else if mu1 + mu2 > 0.5 && (a < 0.0) != (b < 0.0) {
        ((1.0 - mu1 - mu2) / (2.0 * a * b)).min(2.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agrapa_examples() {
        assert!((agrapa_bet(0.8, 0.16, 0.5, 0.75) - 1.2).abs() < 1e-12);
        assert_eq!(agrapa_bet(0.4, 0.1, 0.5, 0.75), 0.0);
        assert!((agrapa_bet(1.0, 0.0, 0.5, 0.75) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn plugin_examples() {
        assert!((plugin_bet(0.25, 100, 0.05) - 0.2532).abs() < 1e-4);
        assert!((plugin_bet(0.25, 100, 0.05) - 0.253_145_017).abs() < 1e-8);
        assert!(plugin_bet(1e9, 100, 0.05) < 1e-3);
        assert!(plugin_bet(1e-8, 3, 0.05) <= 1.0);
    }

    #[test]
    fn inverse_examples() {
        let c = (0.8f64 - 0.4).clamp(0.1, 0.9);
        assert!((c - 0.4).abs() < 1e-12);
        assert!((inverse_bet(c, 0.5) - 0.8).abs() < 1e-12);
        assert_eq!((0.05f64 - 0.2).clamp(0.1, 0.9), 0.1);
        let m = MomentState::new();
        let c = inverse_c(&m, 0.1, 0.9);
        assert!(c <= 0.9 && inverse_bet(c, 1.0) < 1.0);
    }

    #[test]
    fn shrink_trunc_examples() {
        assert!((shrink_trunc_bet(0.0, 0, 0.5, 20.0) - 1.0).abs() < 1e-12);
        // a saturated estimate gives the maximal bet 1/η
        assert!((shrink_trunc_bet(1e8, 100_000_000, 0.5, 20.0) - 2.0).abs() < 1e-6);
        assert_eq!(shrink_trunc_bet(3.0, 4, 1.0, 20.0), 0.0);
    }

    #[test]
    fn kelly_examples() {
        assert_eq!(kelly_oracle_bet(Family::PointMass, 0.6, 0.5), 2.0);
        assert_eq!(kelly_oracle_bet(Family::PointMass, 0.4, 0.5), 0.0);
        assert!((kelly_oracle_bet(Family::Bernoulli, 0.8, 0.5) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn two_point_unstratified() {
        assert_eq!(kelly_twopoint_unstratified_bet(0.6, 0.7), 2.0);
        let l = kelly_twopoint_unstratified_bet(0.35, 0.85);
        assert!((l - 1.904_761_904_761_904_8).abs() < 1e-12);
        assert_eq!(kelly_twopoint_unstratified_bet(0.1, 0.3), 0.0);
    }

    #[test]
    fn moments() {
        let mut m = MomentState::new();
        assert_eq!(m.mean(), 0.5);
        assert!((m.variance() - 0.25).abs() < 1e-15);
        m.update(1.0);
        m.update(0.0);
        assert_eq!(m.mean(), 0.5);
        // residuals 0.5 and -1.0
        assert!((m.variance() - (0.25 + 0.25 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rule_json() {
        let r: BetRule = serde_json::from_str(r#"{"rule":"agrapa"}"#).unwrap();
        assert_eq!(r, BetRule::Agrapa { c: 0.75 });
        let r: BetRule = serde_json::from_str(r#"{"rule":"inverse"}"#).unwrap();
        assert_eq!(r, BetRule::Inverse { l: 0.1, u: 0.9 });
        assert!(BetRule::Fixed { lambda: 1.5 }.validate(2).is_err());
    }
}
