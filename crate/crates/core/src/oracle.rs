//! Closed forms for two equal strata of point masses tested against a
//! global null mean of 1/2, and Wald-style expected stopping times.

use serde::{Deserialize, Serialize};

use crate::bets::kelly_twopoint_unstratified_bet;
use crate::error::{Error, Result};

/// The intersection null that balances `μ₁/η = μ₂/(1 − η)`.
pub fn pointmass_eta_star(mu1: f64, mu2: f64) -> f64 {
    mu1 / (mu1 + mu2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalStopping {
    pub eta_star: f64,
    /// Real-valued crossing time before rounding up.
    pub t: f64,
    pub tau: usize,
    /// Bracket on the global sample size of the Kelly-optimal UI-TS.
    pub n_lower: usize,
    pub n_upper: usize,
}

/// Stopping time of the Kelly-optimal UI-TS, `⌈log α / (log η* − log μ₁)⌉`.
pub fn pointmass_optimal_stopping(mu1: f64, mu2: f64, alpha: f64) -> Result<OptimalStopping> {
    if !(mu1 > 0.0 && mu2 > 0.0 && mu1 <= 1.0 && mu2 <= 1.0) {
        return Err(Error::InvalidParam(format!("means ({mu1}, {mu2}) must lie in (0, 1]")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParam(format!("alpha {alpha} must lie in (0, 1]")));
    }
    let eta_star = pointmass_eta_star(mu1, mu2);
    if alpha == 1.0 {
        return Ok(OptimalStopping { eta_star, t: 0.0, tau: 0, n_lower: 0, n_upper: 0 });
    }
    if (mu1 + mu2) / 2.0 <= 0.5 {
        return Err(Error::InvalidParam(format!(
            "mean {} is not above 1/2; the test never stops",
            (mu1 + mu2) / 2.0
        )));
    }
    let t = alpha.ln() / (eta_star.ln() - mu1.ln());
    let tau = t.ceil() as usize;
    Ok(OptimalStopping { eta_star, t, tau, n_lower: tau, n_upper: 2 * tau })
}

/// `−log α / E[log ΔM]`; infinite when the growth is not positive.
pub fn wald_expected_stopping(alpha: f64, growth: f64) -> f64 {
    if growth <= 0.0 {
        f64::INFINITY
    } else {
        -alpha.ln() / growth
    }
}

/// Expected log growth per draw of the unstratified bet `λ` on two equal
/// point-mass strata against 1/2.
pub fn unstratified_growth(mu1: f64, mu2: f64, lambda: f64) -> f64 {
    0.5 * (lambda * (mu1 - 0.5)).ln_1p() + 0.5 * (lambda * (mu2 - 0.5)).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratificationGain {
    pub unstratified_bet: f64,
    pub unstratified: f64,
    pub stratified: f64,
    /// Unstratified over stratified stopping time.
    pub ratio: f64,
    /// Above 2 the gain survives even the worst case `n_τ = 2τ`.
    pub beats_global_size: bool,
}

pub fn stratification_gain(mu1: f64, mu2: f64, alpha: f64) -> Result<StratificationGain> {
    let opt = pointmass_optimal_stopping(mu1, mu2, alpha)?;
    let lambda = kelly_twopoint_unstratified_bet(mu1, mu2);
    let unstratified = wald_expected_stopping(alpha, unstratified_growth(mu1, mu2, lambda));
    let ratio = unstratified / opt.t;
    Ok(StratificationGain {
        unstratified_bet: lambda,
        unstratified,
        stratified: opt.t,
        ratio,
        beats_global_size: ratio > 2.0,
    })
}
