use strat_anytime::audit::{replay, Draw};
use strat_anytime::bets::{BetRule, Family};
use strat_anytime::geometry::{enumerate_vertices, NullSpec};
use strat_anytime::methods::{
    minimize_inverse, run, InverseObjective, MethodConfig, Procedure, SolverOptions, Strategy,
};
use strat_anytime::population::{make_population, Generator, Mode, Recorded, StreamSet};
use strat_anytime::selection::SelectionRule;

fn half() -> NullSpec {
    NullSpec::new(vec![0.5, 0.5], 0.5).unwrap()
}

/// Running max of the product of fixed-bet terms at one null, tracked by hand.
fn fixed_running_max(lambda: f64, eta: &[f64], draws: &[(usize, f64)]) -> Vec<f64> {
    let mut log = 0.0f64;
    let mut best = 0.0f64;
    draws
        .iter()
        .map(|&(k, x)| {
            log += (1.0 + lambda * (x - eta[k])).ln();
            best = best.max(log);
            best
        })
        .collect()
}

fn draws_of(src: &Recorded, steps: &[strat_anytime::methods::StepRecord]) -> Vec<(usize, f64)> {
    let mut seen = vec![0usize; src.values.len()];
    steps
        .iter()
        .map(|s| {
            let k = s.stratum.unwrap();
            let x = src.values[k][seen[k]];
            seen[k] += 1;
            (k, x)
        })
        .collect()
}

#[test]
fn brute_force_matches_exhaustive_grid() {
    // binary data, two units per stratum: the attainable means are {0, 1/2, 1}
    let src = Recorded { values: vec![vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]] };
    let lambda = 0.5;
    let cfg = MethodConfig::new(Strategy::BruteForce, BetRule::Fixed { lambda }, SelectionRule::RoundRobin)
        .with_alpha(1e-9)
        .with_cap(8);
    let cfg = MethodConfig { support: Some(vec![vec![0.0, 1.0]; 2]), ..cfg };
    let r = run(&cfg, &half(), &[2, 2], &mut src.clone(), true).unwrap();
    let draws = draws_of(&src, &r.trajectory);
    let grid = [0.0, 0.5, 1.0];
    let paths: Vec<Vec<f64>> = grid
        .iter()
        .flat_map(|&a| grid.iter().map(move |&b| [a, b]))
        .filter(|p| 0.5 * p[0] + 0.5 * p[1] <= 0.5)
        .map(|p| fixed_running_max(lambda, &p, &draws))
        .collect();
    assert_eq!(paths.len(), 6);
    for (t, step) in r.trajectory.iter().enumerate() {
        let oracle = paths.iter().map(|p| p[t]).fold(f64::INFINITY, f64::min);
        assert!((step.log_m - oracle).abs() < 1e-12, "t = {}: {} vs {oracle}", t + 1, step.log_m);
    }
}

#[test]
fn vertex_equals_brute_force_on_vertices() {
    let spec = NullSpec::new(vec![0.2, 0.3, 0.5], 0.55).unwrap();
    let sizes = [50, 50, 50];
    let pop = make_population(&Generator::Bernoulli { p: vec![0.5, 0.7, 0.6] }, &sizes, 7, 0).unwrap();
    let bet = BetRule::Agrapa { c: 0.75 };
    let cfg_v = MethodConfig::new(Strategy::Vertex, BetRule::Fixed { lambda: 0.7 }, SelectionRule::RoundRobin)
        .with_alpha(1e-6);
    let cfg_b = MethodConfig {
        strategy: Strategy::BruteForce,
        nulls: Some(enumerate_vertices(&spec).unwrap()),
        ..cfg_v.clone()
    };
    for bets in [BetRule::Fixed { lambda: 0.7 }, bet.clone()] {
        let cv = MethodConfig { bets: bets.clone(), ..cfg_v.clone() };
        let cb = MethodConfig { bets, ..cfg_b.clone() };
        if cv.validate(3).is_err() {
            continue;
        }
        let a = run(&cv, &spec, &sizes, &mut StreamSet::new(&pop, Mode::WithReplacement, 1, 0), true).unwrap();
        let b = run(&cb, &spec, &sizes, &mut StreamSet::new(&pop, Mode::WithReplacement, 1, 0), true).unwrap();
        assert_eq!(a.trajectory.len(), b.trajectory.len());
        for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
            assert!((x.log_m - y.log_m).abs() < 1e-12);
        }
    }
}

#[test]
fn single_band_equals_vertex_with_fixed_bets() {
    let spec = half();
    let sizes = [200, 200];
    let pop = make_population(&Generator::Bernoulli { p: vec![0.55, 0.7] }, &sizes, 3, 0).unwrap();
    let bets = BetRule::Fixed { lambda: 0.5 };
    let banded = MethodConfig::new(Strategy::Banded, bets.clone(), SelectionRule::RoundRobin).with_g(1);
    let vertex = MethodConfig::new(Strategy::Vertex, bets, SelectionRule::RoundRobin);
    let a = run(&banded, &spec, &sizes, &mut StreamSet::new(&pop, Mode::WithReplacement, 9, 0), true).unwrap();
    let b = run(&vertex, &spec, &sizes, &mut StreamSet::new(&pop, Mode::WithReplacement, 9, 0), true).unwrap();
    assert_eq!((a.tau, a.n_tau, a.rejected), (b.tau, b.n_tau, b.rejected));
    for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
        assert!((x.log_m - y.log_m).abs() < 1e-12);
    }
}

#[test]
fn kelly_point_mass_stopping_example() {
    let cfg = MethodConfig::new(
        Strategy::BruteForce,
        BetRule::Kelly { family: Family::PointMass, means: vec![0.6, 0.6] },
        SelectionRule::RoundRobin,
    );
    let cfg = MethodConfig { nulls: Some(vec![vec![0.5, 0.5]]), ..cfg };
    let mut src = Recorded { values: vec![vec![0.6; 100], vec![0.6; 100]] };
    let r = run(&cfg, &half(), &[100, 100], &mut src, false).unwrap();
    assert!(r.rejected);
    assert_eq!(r.tau, 17);
    assert_eq!(r.depths, vec![8, 9]);
    assert_eq!(r.n_tau, 17);
}

#[test]
fn null_point_mass_runs_to_the_cap() {
    let cfg = MethodConfig::new(Strategy::Banded, BetRule::Agrapa { c: 0.75 }, SelectionRule::RoundRobin)
        .with_g(10)
        .with_cap(400);
    let mut src = Recorded { values: vec![vec![0.5; 400], vec![0.5; 400]] };
    let r = run(&cfg, &half(), &[200, 200], &mut src, false).unwrap();
    assert!(!r.rejected);
    assert_eq!(r.n_tau, 400);
    assert!(r.p_value > 0.05);
}

#[test]
fn predictable_kelly_pays_for_separate_interleavings() {
    let spec = half();
    let mut strict = false;
    for means in [[0.6, 0.6], [0.35, 0.85], [0.9, 0.3], [0.55, 0.75]] {
        let cfg = MethodConfig::new(Strategy::Banded, BetRule::Agrapa { c: 0.75 }, SelectionRule::PredictableKelly)
            .with_g(10)
            .with_cap(2000);
        let mut src = Recorded { values: vec![vec![means[0]; 1000], vec![means[1]; 1000]] };
        let r = run(&cfg, &spec, &[1000, 1000], &mut src, false).unwrap();
        assert!(r.rejected, "{means:?}");
        assert!(r.n_tau >= r.tau, "{means:?}");
        strict |= r.n_tau > r.tau;
    }
    assert!(strict);
}

#[test]
fn greedy_selection_follows_the_growing_stratum() {
    // point masses at 0.6, fixed λ = 0.5: at the vertex [1, 0] the stratum-1
    // I-TSM shrinks while the stratum-2 one grows; greedy moves to stratum 2
    let spec = half();
    let cfg = MethodConfig::new(Strategy::Vertex, BetRule::Fixed { lambda: 0.5 }, SelectionRule::GreedyKelly)
        .with_cap(20_000);
    let mut src = Recorded { values: vec![vec![0.6; 10_000], vec![0.6; 10_000]] };
    let r = run(&cfg, &spec, &[10_000, 10_000], &mut src, false).unwrap();
    assert!(r.rejected);
    let rr = MethodConfig { selection: SelectionRule::RoundRobin, ..cfg };
    let mut src = Recorded { values: vec![vec![0.6; 10_000], vec![0.6; 10_000]] };
    let slow = run(&rr, &spec, &[10_000, 10_000], &mut src, false).unwrap();
    assert!(slow.rejected);
    assert!(r.tau <= slow.tau, "greedy {} vs round robin {}", r.tau, slow.tau);
}

#[test]
fn convex_minimizer_satisfies_kkt() {
    let spec = NullSpec::new(vec![0.2, 0.3, 0.5], 0.5).unwrap();
    let history = vec![
        vec![(0.5, 0.9), (0.4, 0.8), (0.6, 0.7)],
        vec![(0.3, 0.2), (0.5, 0.6)],
        vec![(0.5, 0.55), (0.7, 0.65), (0.2, 0.5), (0.4, 0.6)],
    ];
    let obj = InverseObjective { history: &history };
    let m = minimize_inverse(&obj, &spec, &[0.5, 0.5, 0.5], &SolverOptions::default()).unwrap();
    assert!((spec.dot(&m.eta) - 0.5).abs() < 1e-10);
    // interior coordinates share one multiplier: ∂f/∂η_k = ν w_k
    let g = obj.gradient(&m.eta);
    let nu: Vec<f64> = g.iter().zip(&spec.weights).map(|(d, w)| d / w).collect();
    for (k, e) in m.eta.iter().enumerate() {
        if *e > 1e-4 && *e < 1.0 - 1e-4 {
            assert!((nu[k] - nu[2]).abs() < 1e-5 * nu[2].abs().max(1.0), "{nu:?} at {:?}", m.eta);
        }
    }
    // central differences
    let h = 1e-6;
    for k in 0..3 {
        let mut up = m.eta.clone();
        let mut dn = m.eta.clone();
        up[k] += h;
        dn[k] -= h;
        let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
        assert!((fd - g[k]).abs() < 1e-5 * g[k].abs().max(1.0));
    }
}

#[test]
fn convex_and_lcb_reject_an_easy_alternative() {
    let sizes = [300, 300, 300];
    let spec = NullSpec::from_sizes(&sizes, 0.5).unwrap();
    let bets = BetRule::Inverse { l: 0.1, u: 0.9 };
    for strategy in [Strategy::Convex, Strategy::Lcb] {
        let cfg = MethodConfig::new(strategy, bets.clone(), SelectionRule::RoundRobin);
        let mut src = Recorded { values: vec![vec![0.6; 300]; 3] };
        let r = run(&cfg, &spec, &sizes, &mut src, false).unwrap();
        assert!(r.rejected, "{}", strategy.name());
        assert!(r.p_value <= 0.05);
    }
}

#[test]
fn replay_reproduces_a_simulated_path() {
    let spec = half();
    let sizes = [100, 100];
    let pop = make_population(&Generator::Bernoulli { p: vec![0.6, 0.7] }, &sizes, 11, 0).unwrap();
    let cfg = MethodConfig::new(Strategy::Banded, BetRule::Agrapa { c: 0.75 }, SelectionRule::GreedyKelly).with_g(20);
    let sim = run(&cfg, &spec, &sizes, &mut StreamSet::new(&pop, Mode::WithReplacement, 5, 0), true).unwrap();
    let draws: Vec<Draw> = sim
        .trajectory
        .iter()
        .map(|s| Draw { stratum: s.stratum.unwrap() + 1, value: s.value.unwrap() })
        .collect();
    let rep = replay(&cfg, &spec, &sizes, &draws).unwrap();
    assert_eq!(rep.trajectory, sim.trajectory);
    assert_eq!(rep.tau, sim.rejected.then_some(sim.tau));
}

#[test]
fn replay_reports_bad_rows() {
    let spec = half();
    let cfg = MethodConfig::new(Strategy::Lcb, BetRule::Agrapa { c: 0.75 }, SelectionRule::RoundRobin)
        .with_mode(Mode::WithoutReplacement);
    let draws = [
        Draw { stratum: 2, value: 0.5 },
        Draw { stratum: 1, value: 0.5 },
        Draw { stratum: 1, value: 0.5 },
    ];
    let err = replay(&cfg, &NullSpec::from_sizes(&[1, 3], 0.5).unwrap(), &[1, 3], &draws).unwrap_err().to_string();
    assert!(err.contains("row 3"), "{err}");
    let err = replay(&cfg, &spec, &[2, 2], &[Draw { stratum: 3, value: 0.5 }]).unwrap_err().to_string();
    assert!(err.contains("row 1"), "{err}");
    let err = replay(&cfg, &spec, &[2, 2], &[Draw { stratum: 2, value: 1.5 }]).unwrap_err().to_string();
    assert!(err.contains("row 1"), "{err}");

    let empty = replay(&cfg, &spec, &[2, 2], &[]).unwrap();
    assert_eq!(empty.p_value, 1.0);
    assert_eq!(empty.tau, None);

    let aware = MethodConfig::new(Strategy::Banded, BetRule::Agrapa { c: 0.75 }, SelectionRule::PredictableKelly).with_g(2);
    assert!(replay(&aware, &spec, &[2, 2], &[]).is_err());
}

#[test]
fn procedure_checks_the_directed_stratum() {
    let cfg = MethodConfig::new(Strategy::Banded, BetRule::Agrapa { c: 0.75 }, SelectionRule::RoundRobin).with_g(4);
    let mut proc = Procedure::new(&cfg, &half(), &[10, 10]).unwrap();
    assert_eq!(proc.directive(), Some(1));
    assert!(proc.observe(0, 0.5).is_err());
    proc.observe(1, 0.5).unwrap();
    assert_eq!(proc.t(), 1);
    assert_eq!(proc.counts(), vec![0, 1]);
}
