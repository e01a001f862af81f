use proptest::prelude::*;

use strat_anytime::bets::{expected_log_growth, kelly_oracle_bet, BetRule, Family, MomentState};
use strat_anytime::engine::{IntersectionTracker, StratumTsm};
use strat_anytime::geometry::{
    band_grid, contains, enumerate_boundary, enumerate_vertices, project_onto_c, DiscreteSupport, NullSpec,
};
use strat_anytime::methods::{run, MethodConfig, Strategy as Method};
use strat_anytime::population::{conditional_null_mean, Mode, Recorded};
use strat_anytime::selection::{round_robin, SelectionRule};

fn binom(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

#[test]
fn vertex_counts_match_closed_forms() {
    for k in 2..=10usize {
        let spec = NullSpec::new(vec![1.0 / k as f64; k], 0.5).unwrap();
        let v = enumerate_vertices(&spec).unwrap();
        let want = if k % 2 == 0 {
            binom(k as u64, k as u64 / 2)
        } else {
            k as u64 * binom(k as u64 - 1, (k as u64 - 1) / 2)
        };
        assert_eq!(v.len() as u64, want, "K = {k}");
        for p in &v {
            assert!(contains(&spec, p, 1e-10).unwrap());
        }
    }
}

#[test]
fn three_strata_vertices_are_permutations() {
    let spec = NullSpec::new(vec![1.0 / 3.0; 3], 0.5).unwrap();
    let mut v = enumerate_vertices(&spec).unwrap();
    for p in &mut v {
        p.sort_by(f64::total_cmp);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12 && (p[2] - 1.0).abs() < 1e-12, "{p:?}");
    }
}

#[test]
fn binary_attainable_count() {
    // (N_k + 1)^K attainable mean vectors; the boundary is an antichain among them
    let support = DiscreteSupport::new(vec![vec![0.0, 1.0]; 3], vec![4, 4, 4]).unwrap();
    let per_stratum = strat_anytime::geometry::attainable_means(&support).unwrap();
    assert_eq!(per_stratum.iter().map(Vec::len).product::<usize>(), 125);
}

fn weights(k: usize) -> impl proptest::strategy::Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vertices_and_bands_lie_on_the_null_set(w in weights(2), eta0 in 0.05f64..0.95, g in 1usize..40) {
        let spec = NullSpec::new(w, eta0).unwrap();
        for band in band_grid(&spec, g).unwrap() {
            for p in band.endpoints.iter().chain(std::iter::once(&band.anchor)) {
                prop_assert!(contains(&spec, p, 1e-10).unwrap());
            }
        }
    }

    #[test]
    fn vertices_lie_on_the_null_set(w in (2usize..7).prop_flat_map(weights), eta0 in 0.05f64..0.95) {
        let spec = NullSpec::new(w, eta0).unwrap();
        let v = enumerate_vertices(&spec).unwrap();
        prop_assert!(!v.is_empty());
        for p in &v {
            prop_assert!(contains(&spec, p, 1e-10).unwrap());
        }
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                prop_assert!(v[i].iter().zip(&v[j]).any(|(a, b)| (a - b).abs() > 1e-9));
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_optimal(
        w in weights(3),
        eta0 in 0.1f64..0.9,
        p in prop::collection::vec(-0.5f64..1.5, 3),
        qs in prop::collection::vec(prop::collection::vec(-0.5f64..1.5, 3), 20),
    ) {
        let spec = NullSpec::new(w, eta0).unwrap();
        let proj = project_onto_c(&spec, &p).unwrap();
        prop_assert!(contains(&spec, &proj, 1e-10).unwrap());
        let again = project_onto_c(&spec, &proj).unwrap();
        for (a, b) in again.iter().zip(&proj) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let dist = |a: &[f64]| a.iter().zip(&p).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let d = dist(&proj);
        for q in qs {
            let q = project_onto_c(&spec, &q).unwrap();
            prop_assert!(d <= dist(&q) + 1e-9);
        }
    }

    #[test]
    fn boundary_is_a_maximal_antichain(n1 in 1usize..5, n2 in 1usize..5, eta0 in 1u32..10, mid in 1u32..10) {
        let (eta0, mid) = (eta0 as f64 / 10.0, mid as f64 / 10.0);
        let support = DiscreteSupport::new(vec![vec![0.0, 1.0], vec![0.0, mid, 1.0]], vec![n1, n2]).unwrap();
        let spec = NullSpec::from_sizes(&[n1, n2], eta0).unwrap();
        let b = enumerate_boundary(&spec, &support).unwrap();
        let per = strat_anytime::geometry::attainable_means(&support).unwrap();
        let all: Vec<Vec<f64>> = per[0].iter().flat_map(|&a| per[1].iter().map(move |&b| vec![a, b])).collect();
        let feasible: Vec<&Vec<f64>> = all.iter().filter(|z| spec.dot(z) <= eta0 + 1e-12).collect();
        for eta in &b {
            prop_assert!(spec.dot(eta) <= eta0 + 1e-12);
            for z in &feasible {
                let dominates = z.iter().zip(eta.iter()).all(|(a, b)| a >= b)
                    && z.iter().zip(eta.iter()).any(|(a, b)| a > b);
                prop_assert!(!dominates, "{z:?} dominates {eta:?}");
            }
        }
        // every maximal feasible point is returned
        for z in &feasible {
            let maximal = !feasible.iter().any(|y| {
                y.iter().zip(z.iter()).all(|(a, b)| a >= b) && y.iter().zip(z.iter()).any(|(a, b)| a > b)
            });
            if maximal {
                prop_assert!(b.iter().any(|e| e.iter().zip(z.iter()).all(|(a, c)| (a - c).abs() < 1e-12)));
            }
        }
    }

    #[test]
    fn conditional_mean_telescopes(xs in prop::collection::vec(0.0f64..1.0, 1..20), eta in 0.0f64..1.0) {
        let n = xs.len() + 5;
        // the null mean of the remaining units, updated one draw at a time
        let mut eta_t = eta;
        let mut remaining = n as f64;
        let mut sum = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            eta_t = (remaining * eta_t - x) / (remaining - 1.0);
            remaining -= 1.0;
            sum += x;
            let direct = conditional_null_mean(eta, sum, i + 1, n, Mode::WithoutReplacement);
            prop_assert!((eta_t - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn bets_stay_within_their_caps(
        xs in prop::collection::vec(0.0f64..=1.0, 0..30),
        eta in 0.01f64..=1.0,
        mu in 0.0f64..=1.0,
    ) {
        let mut m = MomentState::new();
        for x in &xs {
            m.update(*x);
        }
        let rules = [
            BetRule::Fixed { lambda: 0.7 },
            BetRule::Agrapa { c: 0.75 },
            BetRule::Plugin { alpha: None },
            BetRule::Inverse { l: 0.1, u: 0.9 },
            BetRule::ShrinkTrunc { d: 20.0 },
            BetRule::Kelly { family: Family::Bernoulli, means: vec![mu] },
            BetRule::Kelly { family: Family::PointMass, means: vec![mu] },
        ];
        for r in rules {
            let l = r.lambda(0, &m, eta, 0.05);
            prop_assert!(l >= 0.0 && l <= 1.0 / eta + 1e-12, "{} gave {l} at η = {eta}", r.name());
        }
    }

    #[test]
    fn bernoulli_kelly_bet_is_the_growth_argmax(mu in 0.01f64..0.99, eta in 0.01f64..0.99) {
        let best = kelly_oracle_bet(Family::Bernoulli, mu, eta);
        let g = |l: f64| expected_log_growth(Family::Bernoulli, mu, eta, l);
        // golden-section search over [0, 1/η) as an independent maximizer
        let (mut a, mut b) = (0.0, (1.0 / eta) * (1.0 - 1e-9));
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if g(c) >= g(d) { b = d } else { a = c }
        }
        let numeric = 0.5 * (a + b);
        prop_assert!((best - numeric).abs() < 1e-6 || (g(best) - g(numeric)).abs() < 1e-12,
            "μ={mu} η={eta}: closed form {best}, numeric {numeric}");
    }

    #[test]
    fn product_is_order_invariant(
        steps in prop::collection::vec((0usize..3, 0.0f64..=1.0, 0.0f64..1.5), 1..40),
        perm_seed in any::<u64>(),
    ) {
        let eta = vec![0.4, 0.5, 0.6];
        let mut a = IntersectionTracker::new(eta.clone());
        for &(k, x, l) in &steps {
            a.observe(k, x, l, eta[k], f64::INFINITY).unwrap();
        }
        let mut shuffled = steps.clone();
        let mut s = perm_seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut b = IntersectionTracker::new(eta.clone());
        for &(k, x, l) in &shuffled {
            b.observe(k, x, l, eta[k], f64::INFINITY).unwrap();
        }
        prop_assert!((a.log_value() - b.log_value()).abs() < 1e-9);
        let parts: f64 = a.strata.iter().map(StratumTsm::log_value).sum();
        prop_assert!((a.log_value() - parts).abs() < 1e-9);
    }

    #[test]
    fn running_max_and_p_values_are_monotone(steps in prop::collection::vec((0usize..2, 0.0f64..=1.0, 0.0f64..2.0), 1..60)) {
        let eta = vec![0.5, 0.5];
        let mut tr = IntersectionTracker::new(eta);
        let (mut prev_max, mut prev_p) = (0.0f64, 1.0f64);
        for (k, x, l) in steps {
            tr.observe(k, x, l, 0.5, f64::INFINITY).unwrap();
            prop_assert!(tr.log_running_max() >= prev_max);
            prop_assert!(tr.p_value() <= prev_p);
            prop_assert!(tr.log_value() <= tr.log_running_max());
            prev_max = tr.log_running_max();
            prev_p = tr.p_value();
        }
    }

    #[test]
    fn round_robin_stays_balanced(k in 1usize..8, steps in 1usize..200) {
        let mut counts = vec![0usize; k];
        for t in 1..=steps {
            counts[round_robin(t, &vec![false; k]).unwrap()] += 1;
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn bets_ignore_future_values(
        prefix in prop::collection::vec(0.0f64..=1.0, 4..20),
        tail_a in prop::collection::vec(0.0f64..=1.0, 48),
        tail_b in prop::collection::vec(0.0f64..=1.0, 48),
    ) {
        // identical histories up to a point, different futures: identical
        // paths up to the first draw from the future, and the same directive there
        let cap = 2 * prefix.len() + 8;
        let cfg = MethodConfig::new(Method::Banded, BetRule::Agrapa { c: 0.75 }, SelectionRule::GreedyKelly)
            .with_g(3)
            .with_cap(cap);
        let spec = NullSpec::new(vec![0.5, 0.5], 0.5).unwrap();
        let mk = |tail: &[f64]| {
            let mut v = prefix.clone();
            v.extend_from_slice(tail);
            Recorded { values: vec![v.clone(), v] }
        };
        let ra = run(&cfg, &spec, &[100, 100], &mut mk(&tail_a), true).unwrap();
        let rb = run(&cfg, &spec, &[100, 100], &mut mk(&tail_b), true).unwrap();
        let mut depth = [0usize; 2];
        for (a, b) in ra.trajectory.iter().zip(&rb.trajectory) {
            prop_assert_eq!(a.stratum, b.stratum);
            let k = a.stratum.unwrap();
            depth[k] += 1;
            if depth[k] > prefix.len() {
                break;
            }
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn oblivious_rules_have_equal_tau_and_n(mu1 in 0.3f64..0.95, mu2 in 0.3f64..0.95) {
        let spec = NullSpec::new(vec![0.5, 0.5], 0.5).unwrap();
        for sel in [SelectionRule::RoundRobin, SelectionRule::GreedyKelly] {
            let cfg = MethodConfig::new(Method::Banded, BetRule::Agrapa { c: 0.75 }, sel).with_g(5).with_cap(300);
            let mut src = Recorded { values: vec![vec![mu1; 300], vec![mu2; 300]] };
            let r = run(&cfg, &spec, &[300, 300], &mut src, false).unwrap();
            prop_assert_eq!(r.tau, r.n_tau);
        }
    }
}

#[test]
fn log_space_survives_long_runs() {
    let mut s = StratumTsm::default();
    for _ in 0..1_000_000 {
        s.update(1.0, 2.0, 0.5).unwrap();
    }
    assert!((s.log_value() - 1e6 * 2f64.ln()).abs() < 1e-3);
    let mut s = StratumTsm::default();
    for _ in 0..1_000_000 {
        s.update(0.0, 1.999, 0.5).unwrap();
    }
    assert!(s.log_value().is_finite() && s.log_value() < -1e6);
}
