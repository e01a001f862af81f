//! The set of intersection nulls: the polytope `{w·η = η0, 0 ≤ η ≤ 1}`, its
//! vertices, equispaced bands for two strata, the discrete boundary of the
//! null under a known support, and Euclidean projection.

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default limit on the stratum count for vertex enumeration.
pub const VERTEX_CAP: usize = 16;
/// Default limit on the product bound of the discrete boundary.
pub const BOUNDARY_CAP: u128 = 10_000_000;

/// Stratum weights and the global null mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNullSpec")]
pub struct NullSpec {
    pub weights: Vec<f64>,
    pub eta0: f64,
}

#[derive(Deserialize)]
struct RawNullSpec {
    weights: Vec<f64>,
    eta0: f64,
}

impl TryFrom<RawNullSpec> for NullSpec {
    type Error = Error;
    fn try_from(raw: RawNullSpec) -> Result<Self> {
        NullSpec::new(raw.weights, raw.eta0)
    }
}

impl NullSpec {
    pub fn new(weights: Vec<f64>, eta0: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSpec("at least one stratum is required".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidSpec("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("weights sum to {total}, not 1")));
        }
        if !(0.0..=1.0).contains(&eta0) {
            return Err(Error::InvalidSpec(format!("eta0 = {eta0} is outside [0, 1]")));
        }
        Ok(Self { weights, eta0 })
    }

    /// Weights proportional to stratum sizes.
    pub fn from_sizes(sizes: &[usize], eta0: f64) -> Result<Self> {
        let n: usize = sizes.iter().sum();
        if n == 0 || sizes.contains(&0) {
            return Err(Error::InvalidSpec("stratum sizes must be positive".into()));
        }
        let mut weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
        // absorb rounding so the weights sum to one within 1e-12
        let drift: f64 = 1.0 - weights.iter().sum::<f64>();
        weights[0] += drift;
        Self::new(weights, eta0)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dot(&self, eta: &[f64]) -> f64 {
        self.weights.iter().zip(eta).map(|(w, e)| w * e).sum()
    }
}

/// Membership in `{w·η = η0, 0 ≤ η ≤ 1}` up to `tol` on the equality.
pub fn contains(spec: &NullSpec, eta: &[f64], tol: f64) -> Result<bool> {
    if eta.len() != spec.k() {
        return Err(Error::Dimension { expected: spec.k(), got: eta.len() });
    }
    let in_box = eta.iter().all(|&e| (0.0..=1.0).contains(&e));
    Ok(in_box && (spec.dot(eta) - spec.eta0).abs() <= tol)
}

pub fn enumerate_vertices(spec: &NullSpec) -> Result<Vec<Vec<f64>>> {
    enumerate_vertices_capped(spec, VERTEX_CAP)
}

/// A vertex has at least K-1 coordinates on the cube's faces; the remaining
/// coordinate is pinned by the hyperplane.
pub fn enumerate_vertices_capped(spec: &NullSpec, cap: usize) -> Result<Vec<Vec<f64>>> {
    let k = spec.k();
    if k > cap {
        return Err(Error::TooManyVertices { k, cap });
    }
    let w = &spec.weights;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for free in 0..k {
        for mask in 0u64..(1u64 << (k - 1)) {
            let mut eta = vec![0.0; k];
            let mut bit = 0;
            let mut fixed = 0.0;
            for (j, e) in eta.iter_mut().enumerate() {
                if j == free {
                    continue;
                }
                if mask >> bit & 1 == 1 {
                    *e = 1.0;
                    fixed += w[j];
                }
                bit += 1;
            }
            let value = (spec.eta0 - fixed) / w[free];
            if !(-1e-12..=1.0 + 1e-12).contains(&value) {
                continue;
            }
            eta[free] = value.clamp(0.0, 1.0);
            let dup = out
                .iter()
                .any(|v| v.iter().zip(&eta).all(|(a, b)| (a - b).abs() <= 1e-12));
            if !dup {
                out.push(eta);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Infeasible(format!("no point of the cube has w·η = {}", spec.eta0)));
    }
    Ok(out)
}

/// Possible values and sizes of each stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSupport {
    pub values: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
}

impl DiscreteSupport {
    pub fn new(values: Vec<Vec<f64>>, sizes: Vec<usize>) -> Result<Self> {
        if values.len() != sizes.len() {
            return Err(Error::Dimension { expected: sizes.len(), got: values.len() });
        }
        for (k, vals) in values.iter().enumerate() {
            if vals.is_empty() {
                return Err(Error::InvalidParam(format!("stratum {k} has an empty support")));
            }
            if let Some(v) = vals.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange(*v));
            }
            for (i, a) in vals.iter().enumerate() {
                if vals[..i].contains(a) {
                    return Err(Error::InvalidParam(format!("stratum {k} repeats value {a}")));
                }
            }
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidParam("stratum sizes must be positive".into()));
        }
        Ok(Self { values, sizes })
    }
}

fn to_ratio(x: f64) -> Result<Ratio<i64>> {
    Ratio::<i64>::approximate_float(x)
        .ok_or_else(|| Error::InvalidParam(format!("{x} has no rational approximation")))
}

struct ExactGrid {
    /// scale c_k: attainable means are multiples of 1/(c_k N_k)
    scale: Vec<i64>,
    /// attainable scaled sums, ascending
    sums: Vec<Vec<i64>>,
}

fn exact_grid(support: &DiscreteSupport, cap: u128) -> Result<ExactGrid> {
    let mut scale = Vec::new();
    let mut scaled_values = Vec::new();
    let mut bound: u128 = 1;
    for (vals, &n) in support.values.iter().zip(&support.sizes) {
        let ratios = vals.iter().map(|&v| to_ratio(v)).collect::<Result<Vec<_>>>()?;
        let c = ratios.iter().fold(1i64, |acc, r| acc.lcm(r.denom()));
        bound = bound.saturating_mul(c as u128 * n as u128 + 1);
        if bound > cap {
            return Err(Error::BoundaryTooLarge { bound, cap });
        }
        scaled_values.push(ratios.iter().map(|r| (r * c).to_integer()).collect::<Vec<_>>());
        scale.push(c);
    }
    let mut sums = Vec::new();
    for (vals, (&c, &n)) in scaled_values.iter().zip(scale.iter().zip(&support.sizes)) {
        let top = (c as usize) * n;
        let mut reach = vec![false; top + 1];
        reach[0] = true;
        for _ in 0..n {
            let mut next = vec![false; top + 1];
            for (s, _) in reach.iter().enumerate().filter(|(_, r)| **r) {
                for &v in vals {
                    next[s + v as usize] = true;
                }
            }
            reach = next;
        }
        sums.push(
            reach.iter().enumerate().filter(|(_, r)| **r).map(|(s, _)| s as i64).collect(),
        );
    }
    Ok(ExactGrid { scale, sums })
}

/// Attainable stratum means for each stratum, ascending.
pub fn attainable_means(support: &DiscreteSupport) -> Result<Vec<Vec<f64>>> {
    let grid = exact_grid(support, BOUNDARY_CAP)?;
    Ok(grid
        .sums
        .iter()
        .zip(grid.scale.iter().zip(&support.sizes))
        .map(|(s, (&c, &n))| s.iter().map(|&v| v as f64 / (c as f64 * n as f64)).collect())
        .collect())
}

pub fn enumerate_boundary(spec: &NullSpec, support: &DiscreteSupport) -> Result<Vec<Vec<f64>>> {
    enumerate_boundary_capped(spec, support, BOUNDARY_CAP)
}

/// Maximal attainable mean vectors satisfying `w·η ≤ η0`, with weights
/// proportional to the support's stratum sizes.
pub fn enumerate_boundary_capped(
    spec: &NullSpec,
    support: &DiscreteSupport,
    cap: u128,
) -> Result<Vec<Vec<f64>>> {
    let k = spec.k();
    if support.sizes.len() != k {
        return Err(Error::Dimension { expected: k, got: support.sizes.len() });
    }
    let n_total: usize = support.sizes.iter().sum();
    for (w, &n) in spec.weights.iter().zip(&support.sizes) {
        if (w - n as f64 / n_total as f64).abs() > 1e-9 {
            return Err(Error::InvalidSpec("weights must equal N_k / N for a discrete boundary".into()));
        }
    }
    let grid = exact_grid(support, cap)?;
    // w·η = (1/N) Σ s_k / c_k; compare Σ s_k (L / c_k) q ≤ p N L with η0 = p / q
    let l = grid.scale.iter().fold(1i64, |acc, &c| acc.lcm(&c)) as i128;
    let eta0 = to_ratio(spec.eta0)?;
    let (p, q) = (*eta0.numer() as i128, *eta0.denom() as i128);
    let budget = p * n_total as i128 * l;
    let mult: Vec<i128> = grid.scale.iter().map(|&c| (l / c as i128) * q).collect();

    let mut out = Vec::new();
    let mut chosen = vec![0usize; k];
    walk(&grid.sums, &mult, budget, 0, 0, &mut chosen, &mut |idx| {
        // maximal iff bumping any coordinate to its next attainable value breaks feasibility
        let used: i128 = (0..k).map(|j| grid.sums[j][idx[j]] as i128 * mult[j]).sum();
        let maximal = (0..k).all(|j| match grid.sums[j].get(idx[j] + 1) {
            Some(&next) => used + (next - grid.sums[j][idx[j]]) as i128 * mult[j] > budget,
            None => true,
        });
        if maximal {
            out.push(
                (0..k)
                    .map(|j| {
                        grid.sums[j][idx[j]] as f64
                            / (grid.scale[j] as f64 * support.sizes[j] as f64)
                    })
                    .collect(),
            );
        }
    });
    Ok(out)
}

fn walk(
    sums: &[Vec<i64>],
    mult: &[i128],
    budget: i128,
    depth: usize,
    used: i128,
    chosen: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    let k = sums.len();
    if depth == k - 1 {
        // largest feasible value in the last stratum
        let room = budget - used;
        if room < 0 {
            return;
        }
        let last = &sums[depth];
        let fits = last.partition_point(|&s| s as i128 * mult[depth] <= room);
        if fits == 0 {
            return;
        }
        chosen[depth] = fits - 1;
        emit(chosen);
        return;
    }
    for (i, &s) in sums[depth].iter().enumerate() {
        let next = used + s as i128 * mult[depth];
        if next > budget {
            break;
        }
        chosen[depth] = i;
        walk(sums, mult, budget, depth + 1, next, chosen, emit);
    }
}

/// A segment of the null line for two strata, with the point used to tune
/// bets and selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub endpoints: [Vec<f64>; 2],
    pub anchor: Vec<f64>,
}

/// `g` bands with equispaced endpoints along the null line; consecutive bands
/// share an endpoint.
pub fn band_grid(spec: &NullSpec, g: usize) -> Result<Vec<Band>> {
    if spec.k() != 2 {
        return Err(Error::Unsupported(format!("banding needs K = 2, got K = {}", spec.k())));
    }
    if g == 0 {
        return Err(Error::InvalidParam("the band count must be positive".into()));
    }
    let mut verts = enumerate_vertices(spec)?;
    verts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let (a, b) = (verts[0].clone(), verts[verts.len() - 1].clone());
    let point = |j: usize| -> Vec<f64> {
        let s = j as f64 / g as f64;
        let mut p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * (y - x)).collect();
        if j == 0 {
            p = a.clone();
        } else if j == g {
            p = b.clone();
        }
        p
    };
    Ok((0..g)
        .map(|j| {
            let (lo, hi) = (point(j), point(j + 1));
            let anchor = lo.iter().zip(&hi).map(|(x, y)| 0.5 * (x + y)).collect();
            Band { endpoints: [lo, hi], anchor }
        })
        .collect())
}

pub fn project_onto_c(spec: &NullSpec, point: &[f64]) -> Result<Vec<f64>> {
    project_box(spec, point, 0.0, 1.0)
}

/// Euclidean projection onto `{w·η = η0, lo ≤ η ≤ hi}` by bisection on the
/// hyperplane multiplier, finished with an exact solve on the active set.
pub fn project_box(spec: &NullSpec, point: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let k = spec.k();
    if point.len() != k {
        return Err(Error::Dimension { expected: k, got: point.len() });
    }
    let w = &spec.weights;
    let target = spec.eta0;
    if target < lo - 1e-15 || target > hi + 1e-15 {
        return Err(Error::Infeasible(format!("eta0 = {target} outside [{lo}, {hi}]")));
    }
    let at = |nu: f64| -> Vec<f64> {
        point.iter().zip(w).map(|(p, wk)| (p + nu * wk).clamp(lo, hi)).collect()
    };
    let level = |eta: &[f64]| -> f64 { w.iter().zip(eta).map(|(a, b)| a * b).sum() };

    let mut a = point.iter().zip(w).map(|(p, wk)| (lo - p) / wk).fold(f64::INFINITY, f64::min);
    let mut b = point.iter().zip(w).map(|(p, wk)| (hi - p) / wk).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if level(&at(mid)) < target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    let nu = 0.5 * (a + b);
    let mut eta = at(nu);
    // exact multiplier for the coordinates strictly inside the box
    let free: Vec<usize> = (0..k).filter(|&j| eta[j] > lo && eta[j] < hi).collect();
    if !free.is_empty() {
        let clamped: f64 = (0..k).filter(|j| !free.contains(j)).map(|j| w[j] * eta[j]).sum();
        let wp: f64 = free.iter().map(|&j| w[j] * point[j]).sum();
        let ww: f64 = free.iter().map(|&j| w[j] * w[j]).sum();
        let exact = (target - clamped - wp) / ww;
        let mut candidate = eta.clone();
        for &j in &free {
            candidate[j] = (point[j] + exact * w[j]).clamp(lo, hi);
        }
        if (level(&candidate) - target).abs() <= (level(&eta) - target).abs() {
            eta = candidate;
        }
    }
    let residual = (level(&eta) - target).abs();
    if residual > 1e-10 {
        return Err(Error::Infeasible(format!("projection residual {residual:e}")));
    }
    Ok(eta)
}
