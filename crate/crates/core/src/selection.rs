//! Stratum selection: round robin and a UCB rule on past betting terms.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    RoundRobin,
    /// UCB run separately for every intersection null.
    PredictableKelly,
    /// UCB run at the previous minimizer, shared by every null.
    GreedyKelly,
    /// Largest expected log growth under the true means (simulation only).
    KellyOracle,
    /// Test the vertices one at a time, drawing from the stratum where the
    /// current vertex has its smallest coordinate.
    VertexSweep,
}

impl SelectionRule {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionRule::RoundRobin => "round_robin",
            SelectionRule::PredictableKelly => "predictable_kelly",
            SelectionRule::GreedyKelly => "greedy_kelly",
            SelectionRule::KellyOracle => "kelly_oracle",
            SelectionRule::VertexSweep => "vertex_sweep",
        }
    }

    /// Whether different nulls may see different interleavings.
    pub fn eta_aware(&self) -> bool {
        matches!(self, SelectionRule::PredictableKelly | SelectionRule::KellyOracle)
    }
}

/// Running mean and spread of the betting terms drawn from one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermStats {
    pub n: usize,
    mean: f64,
    m2: f64,
}

impl TermStats {
    pub fn push(&mut self, z: f64) {
        let z = z.clamp(0.0, 1e12);
        self.n += 1;
        let d = z - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (z - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation over `sqrt(n)`; infinite below two terms.
    pub fn se(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let var = (self.m2 / (self.n - 1) as f64).max(0.0);
        (var / self.n as f64).sqrt()
    }

    pub fn ucb(&self) -> f64 {
        self.mean + 2.0 * self.se()
    }
}

/// `S_t = 1 + (t mod K)` in one-based terms, moving forward past exhausted strata.
pub fn round_robin(t: usize, exhausted: &[bool]) -> Option<usize> {
    let k = exhausted.len();
    (0..k).map(|j| (t + j) % k).find(|&s| !exhausted[s])
}

/// Index of the largest bound, lowest index on ties, skipping exhausted strata.
pub fn argmax_ucb(bounds: &[f64], exhausted: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &b) in bounds.iter().enumerate() {
        if exhausted[k] {
            continue;
        }
        match best {
            Some(j) if bounds[j] >= b => {}
            _ => best = Some(k),
        }
    }
    best
}

/// UCB on past terms after a round-robin warm-up that visits every stratum once.
pub fn ucb_select(t: usize, stats: &[TermStats], exhausted: &[bool]) -> Option<usize> {
    let k = stats.len();
    let unvisited = (0..k).map(|j| (t + j) % k).find(|&s| !exhausted[s] && stats[s].n == 0);
    if unvisited.is_some() {
        return unvisited;
    }
    let bounds: Vec<f64> = stats.iter().map(TermStats::ucb).collect();
    argmax_ucb(&bounds, exhausted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_examples() {
        let free = [false, false];
        let picks: Vec<usize> = (1..=4).map(|t| round_robin(t, &free).unwrap() + 1).collect();
        assert_eq!(picks, vec![2, 1, 2, 1]);
        let picks: Vec<usize> = (1..=6).map(|t| round_robin(t, &[false; 3]).unwrap()).collect();
        assert_eq!(picks, vec![1, 2, 0, 1, 2, 0]);
        assert!((1..10).all(|t| round_robin(t, &[true, false]) == Some(1)));
        assert_eq!(round_robin(3, &[true, true]), None);
    }

    #[test]
    fn ucb_examples() {
        let bounds = [1.10 + 2.0 * 0.01, 1.05 + 2.0 * 0.10];
        assert_eq!(argmax_ucb(&bounds, &[false, false]), Some(1));
        assert_eq!(argmax_ucb(&[1.0, 1.0], &[false, false]), Some(0));
        let fresh = [TermStats::default(); 2];
        assert_eq!(ucb_select(1, &fresh, &[false, false]), Some(1));
    }

    #[test]
    fn term_stats() {
        let mut s = TermStats::default();
        assert!(s.se().is_infinite());
        for z in [1.0, 2.0, 3.0] {
            s.push(z);
        }
        assert!((s.mean() - 2.0).abs() < 1e-15);
        assert!((s.se() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
