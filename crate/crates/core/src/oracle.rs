//! Ground truth: exact enumeration of projection laws on small spaces,
//! exact conditioning by restriction, the checks built on them, and
//! standard-error comparators for Monte Carlo.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{self, FunctionalSpec};
use crate::ground::{Configuration, GroundSpace};
use crate::kernels::{self, IntegrableKernel, ProjectionMatrix};
use crate::linalg;
use crate::palm::{self, Fault};
use crate::sampler::{uniform, SamplerState};

pub const MAX_NODES: usize = 24;
pub const MAX_SUBSETS: u64 = 1_000_000;
/// TV bound for conditioning by rank-one updates.
pub const CONDITION_TV_TOL: f64 = 1e-10;
/// TV bound for transforms that go through a linear solve.
pub const SOLVE_TV_TOL: f64 = 1e-8;
pub const NORMALIZER_TOL: f64 = 1e-10;
pub const RN_REL_TOL: f64 = 1e-8;

/// A law on configurations of at most 64 nodes, keyed by bitmask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Law {
    pub n: usize,
    pub probs: BTreeMap<u64, f64>,
}

impl Law {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn get(&self, mask: u64) -> f64 {
        self.probs.get(&mask).copied().unwrap_or(0.0)
    }

    pub fn prob(&self, x: &Configuration) -> f64 {
        self.get(x.mask())
    }

    /// `½ Σ |p - q|` over the union of supports.
    pub fn tv(&self, other: &Law) -> f64 {
        let mut s = 0.0;
        for (k, v) in &self.probs {
            s += (v - other.get(*k)).abs();
        }
        for (k, v) in &other.probs {
            if !self.probs.contains_key(k) {
                s += v.abs();
            }
        }
        0.5 * s
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.values().copied().fold(f64::INFINITY, f64::min)
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// All `r`-subsets of `0..n` as bitmasks, in colex order.
pub fn subsets(n: usize, r: usize) -> Vec<u64> {
    if r > n {
        return Vec::new();
    }
    if r == 0 {
        return alloc::vec![0];
    }
    let mut out = Vec::new();
    let mut s: u64 = (1u64 << r) - 1;
    let limit = 1u64 << n;
    while s < limit {
        out.push(s);
        // Gosper's hack
        let c = s & s.wrapping_neg();
        let t = s + c;
        s = (((t ^ s) >> 2) / c) | t;
    }
    out
}

fn mask_indices(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask & (1u64 << i) != 0).collect()
}

/// Exact law of the projection process: `P(S) = det(V_S)²` for the frame `V`.
pub fn enumerate(p: &ProjectionMatrix) -> Result<Law> {
    let n = p.n();
    let r = p.rank;
    let count = binomial(n, r);
    if n > MAX_NODES || count > MAX_SUBSETS {
        return Err(Error::SizeCap { n, subsets: count });
    }
    let mut probs = BTreeMap::new();
    for mask in subsets(n, r) {
        let idx = mask_indices(mask);
        let v = DMatrix::from_fn(r, r, |a, b| p.frame[(idx[a], b)]);
        let d = linalg::determinant(&v);
        probs.insert(mask, d * d);
    }
    Ok(Law { n, probs })
}

/// Same law computed from principal minors `det(P_S)`.
pub fn enumerate_minors(p: &ProjectionMatrix) -> Result<Law> {
    let n = p.n();
    let r = p.rank;
    let count = binomial(n, r);
    if n > MAX_NODES || count > MAX_SUBSETS {
        return Err(Error::SizeCap { n, subsets: count });
    }
    let mut probs = BTreeMap::new();
    for mask in subsets(n, r) {
        let idx = mask_indices(mask);
        let m = DMatrix::from_fn(r, r, |a, b| p.get(idx[a], idx[b]));
        probs.insert(mask, linalg::determinant(&m));
    }
    Ok(Law { n, probs })
}

/// Restricts to configurations containing `particles` and avoiding
/// `holes`, renormalizes and erases the particles.
pub fn conditional_law(law: &Law, particles: &[usize], holes: &[usize]) -> Result<Law> {
    let pm = particles.iter().fold(0u64, |m, &i| m | (1u64 << i));
    let hm = holes.iter().fold(0u64, |m, &i| m | (1u64 << i));
    let mut probs = BTreeMap::new();
    let mut total = 0.0;
    for (&k, &v) in &law.probs {
        if k & pm == pm && k & hm == 0 && v > 0.0 {
            *probs.entry(k & !pm).or_insert(0.0) += v;
            total += v;
        }
    }
    if !(total > 0.0) {
        return Err(Error::ZeroProbability);
    }
    for v in probs.values_mut() {
        *v /= total;
    }
    Ok(Law { n: law.n, probs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check: String,
    pub instance: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Report {
    pub fn new(check: &str, instance: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            instance: instance.into(),
            metric: metric.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    fn failed(check: &str, instance: &str, err: &Error) -> Self {
        Self {
            check: check.into(),
            instance: instance.into(),
            metric: format!("error: {err}"),
            value: f64::INFINITY,
            tolerance: 0.0,
            pass: false,
        }
    }
}

/// TV between the exact Palm law at `q` and the law of `Π^q`.
pub fn check_palm(p: &ProjectionMatrix, q: usize, instance: &str, fault: Fault) -> Report {
    let name = "palm";
    if p.get(q, q) <= palm::DEGENERACY_TOL {
        let mut r = Report::new(name, instance, "impossible_event", p.get(q, q), palm::DEGENERACY_TOL);
        r.pass = true;
        return r;
    }
    let run = || -> Result<f64> {
        let law = enumerate(p)?;
        let exact = conditional_law(&law, &[q], &[])?;
        let pq = palm::palm_kernel_with(p, q, fault)?;
        Ok(exact.tv(&enumerate(&pq)?))
    };
    match run() {
        Ok(tv) => Report::new(name, instance, "tv", tv, CONDITION_TV_TOL),
        Err(e) => Report::failed(name, instance, &e),
    }
}

/// TV between the exact hole-conditioned law at `q` and the law of `Π^q̆`.
/// When `Π(q,q) = 1` the check passes iff both sides refuse the event.
pub fn check_hole(p: &ProjectionMatrix, q: usize, instance: &str) -> Report {
    let name = "hole";
    if 1.0 - p.get(q, q) <= palm::DEGENERACY_TOL {
        let law = enumerate(p);
        let refused_exact = matches!(law.map(|l| conditional_law(&l, &[], &[q])), Ok(Err(Error::ZeroProbability)));
        let refused_kernel = matches!(palm::hole_kernel(p, q), Err(Error::ConditioningImpossible { .. }));
        let mut r = Report::new(name, instance, "impossible_event", p.get(q, q), 1.0);
        r.pass = refused_exact && refused_kernel;
        return r;
    }
    let run = || -> Result<f64> {
        let law = enumerate(p)?;
        let exact = conditional_law(&law, &[], &[q])?;
        Ok(exact.tv(&enumerate(&palm::hole_kernel(p, q)?)?))
    };
    match run() {
        Ok(tv) => Report::new(name, instance, "tv", tv, CONDITION_TV_TOL),
        Err(e) => Report::failed(name, instance, &e),
    }
}

/// Reweights the law by `∏ g` and compares with the law of `Π^g`;
/// also compares the enumerated normalizer with `det(I + (g-1)P)`.
pub fn check_mult(p: &ProjectionMatrix, g: &[f64], instance: &str) -> [Report; 2] {
    let run = || -> Result<(f64, f64)> {
        let law = enumerate(p)?;
        let mut probs = BTreeMap::new();
        let mut z = 0.0;
        for (&k, &v) in &law.probs {
            let w: f64 = mask_indices(k).iter().map(|&i| g[i]).product::<f64>() * v;
            if w > 0.0 {
                probs.insert(k, w);
            }
            z += w;
        }
        if !(z > 0.0) {
            return Err(Error::ZeroNormalizer { stage: 0 });
        }
        for v in probs.values_mut() {
            *v /= z;
        }
        let reweighted = Law { n: law.n, probs };
        let det = functionals::fredholm(g, p)?;
        let pg = functionals::transformed_from_values(g, p)?;
        Ok((reweighted.tv(&enumerate(&pg)?), (z - det).abs()))
    };
    match run() {
        Ok((tv, dz)) => [
            Report::new("mult", instance, "tv", tv, SOLVE_TV_TOL),
            Report::new("mult", instance, "normalizer", dz, NORMALIZER_TOL),
        ],
        Err(e) => [Report::failed("mult", instance, &e), Report::failed("mult", instance, &e)],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnCheck {
    pub report: Report,
    /// Configurations where every moved point is occupied or every one empty.
    pub trivial_cases: usize,
    /// Whether the formula returned exactly 1 on all of them.
    pub trivial_exact: bool,
    pub checked: usize,
}

/// Compares `law(σX) / law(X)` with the permutation formula over every
/// positive-probability `X`; reports the maximal relative error.
pub fn check_rn(p: &ProjectionMatrix, points: &[usize], sigma: &[usize], instance: &str, fault: Fault) -> RnCheck {
    let name = "rn";
    let law = match enumerate(p) {
        Ok(l) => l,
        Err(e) => {
            return RnCheck {
                report: Report::failed(name, instance, &e),
                trivial_cases: 0,
                trivial_exact: false,
                checked: 0,
            }
        }
    };
    let mut worst: f64 = 0.0;
    let mut trivial_cases = 0;
    let mut trivial_exact = true;
    let mut checked = 0;
    for (&mask, &prob) in &law.probs {
        if !(prob > 0.0) {
            continue;
        }
        let x = Configuration::from_mask(mask);
        let image = functionals::permute_configuration(&x, points, sigma);
        let exact = law.prob(&image) / prob;
        let occupied = points.iter().filter(|&&i| x.contains(i)).count();
        let trivial = occupied == 0 || occupied == points.len();
        let rep = functionals::rn_relabel_with(p, points, sigma, &x, &[], fault).map(|r| r.value);
        let value = match rep {
            Ok(v) => v,
            Err(e) => {
                return RnCheck {
                    report: Report::failed(name, instance, &e),
                    trivial_cases,
                    trivial_exact: false,
                    checked,
                }
            }
        };
        if trivial {
            trivial_cases += 1;
            trivial_exact &= value == 1.0;
        }
        let scale = exact.abs().max(value.abs());
        let rel = if scale == 0.0 { 0.0 } else { (exact - value).abs() / scale };
        worst = worst.max(rel);
        checked += 1;
    }
    RnCheck {
        report: Report::new(name, instance, "max_rel_error", worst, RN_REL_TOL),
        trivial_cases,
        trivial_exact,
        checked,
    }
}

/// Standard-error comparison of a sample mean with a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub mean: f64,
    pub std_error: f64,
    pub target: f64,
    /// `|mean - target| / std_error`.
    pub sigmas: f64,
    pub k_sigma: f64,
    pub pass: bool,
}

pub fn mc_compare(samples: &[f64], target: f64, k_sigma: f64) -> McReport {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let std_error = libm::sqrt(var / n);
    finish(mean, std_error, target, k_sigma)
}

/// Sample variance against a target, with the standard error of the
/// variance estimator `√((m₄ - s⁴)/N)`.
pub fn mc_compare_variance(samples: &[f64], target: f64, k_sigma: f64) -> McReport {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let m4 = samples.iter().map(|v| libm::pow(v - mean, 4.0)).sum::<f64>() / n;
    let std_error = libm::sqrt(((m4 - var * var) / n).max(0.0));
    finish(var, std_error, target, k_sigma)
}

fn finish(mean: f64, std_error: f64, target: f64, k_sigma: f64) -> McReport {
    let dev = (mean - target).abs();
    // deviations at rounding level count as exact agreement
    let sigmas = if dev <= 1e-12 {
        0.0
    } else if std_error > 0.0 {
        dev / std_error
    } else {
        f64::INFINITY
    };
    McReport {
        mean,
        std_error,
        target,
        sigmas,
        k_sigma,
        pass: sigmas <= k_sigma,
    }
}

/// z-score bound for sampler correlation checks.
pub const SAMPLER_Z: f64 = 4.0;

// |f - p| in units of the binomial standard error at the target.
fn binomial_z(hits: usize, count: usize, p: f64) -> f64 {
    let f = hits as f64 / count as f64;
    let dev = (f - p).abs();
    let var = p * (1.0 - p) / count as f64;
    if dev <= 1e-12 {
        0.0
    } else if var > 0.0 {
        dev / libm::sqrt(var)
    } else {
        f64::INFINITY
    }
}

/// Cardinality, one-point and two-point checks of draws from `p`: every
/// draw has exactly `rank` points, inclusion frequencies match `P_ii`, and
/// pair frequencies match `det [[P_ii, P_ij], [P_ji, P_jj]]`, within
/// [`SAMPLER_Z`] binomial standard errors.
pub fn check_sampler(p: &ProjectionMatrix, draws: &[Configuration], instance: &str) -> [Report; 3] {
    let n = p.n();
    let bad = draws.iter().filter(|x| x.len() != p.rank).count();
    let mut ones = alloc::vec![0usize; n];
    let mut pairs = alloc::vec![0usize; n * n];
    for x in draws {
        let idx = x.indices();
        for (a, &i) in idx.iter().enumerate() {
            ones[i] += 1;
            for &j in &idx[a + 1..] {
                pairs[i * n + j] += 1;
            }
        }
    }
    let count = draws.len();
    let mut z1: f64 = 0.0;
    let mut z2: f64 = 0.0;
    for i in 0..n {
        z1 = z1.max(binomial_z(ones[i], count, p.get(i, i).clamp(0.0, 1.0)));
        for j in i + 1..n {
            let target = (p.get(i, i) * p.get(j, j) - p.get(i, j) * p.get(j, i)).clamp(0.0, 1.0);
            z2 = z2.max(binomial_z(pairs[i * n + j], count, target));
        }
    }
    [
        Report::new("sampler", instance, "cardinality_violations", bad as f64, 0.0),
        Report::new("sampler", instance, "one_point_max_z", z1, SAMPLER_Z),
        Report::new("sampler", instance, "two_point_max_z", z2, SAMPLER_Z),
    ]
}

/// Standard normal draw by Box–Muller.
pub fn normal(rng: &mut impl rand_core::RngCore) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Projection onto the span of `r` Gaussian vectors on `n` integer points.
pub fn random_frame_projection(n: usize, r: usize, state: &SamplerState) -> Result<ProjectionMatrix> {
    let mut rng = state.rng();
    let g = DMatrix::from_fn(n, r, |_, _| normal(&mut rng));
    let (q, rank) = linalg::orthonormal_basis(&g, 1e-12);
    if rank != r {
        return Err(Error::Invalid("random frame is rank deficient".into()));
    }
    let space = GroundSpace::integers(0, n as i64 - 1)?;
    kernels::projection_from_frame(&space, &q.columns(0, r).into_owned())
}

/// Random discrete orthogonal-polynomial ensemble: `n` random increasing
/// points, random positive masses, rank `r`. These are integrable.
pub fn random_op_ensemble(n: usize, r: usize, state: &SamplerState) -> Result<(ProjectionMatrix, IntegrableKernel)> {
    let mut rng = state.rng();
    let mut x = 0.0;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        x += 0.5 + uniform(&mut rng);
        points.push(x);
    }
    let shift = points[n / 2];
    for p in &mut points {
        *p -= shift;
    }
    let masses: Vec<f64> = (0..n).map(|_| 0.5 + 1.5 * uniform(&mut rng)).collect();
    let kernel = kernels::discrete_op_ensemble(&points, &masses, r)?;
    let space = GroundSpace::discrete(points)?;
    let p = kernels::discretize(&kernel, &space, 1e-8)?;
    Ok((p, kernel))
}

/// Instance label for reports.
pub fn label(kind: &str, n: usize, r: usize, seed: u64, idx: usize) -> String {
    let mut s = kind.to_string();
    s.push_str(&format!("(n={n},r={r},seed={seed},#{idx})"));
    s
}

/// `TV` of two laws given as tables over the same keys; convenience for
/// callers that build laws outside this module.
pub fn tv_from_pairs(a: &[(u64, f64)], b: &[(u64, f64)]) -> f64 {
    let la = Law {
        n: 0,
        probs: a.iter().copied().collect(),
    };
    let lb = Law {
        n: 0,
        probs: b.iter().copied().collect(),
    };
    la.tv(&lb)
}

/// Reweighting check for a [`FunctionalSpec`] (values at nodes).
pub fn check_mult_spec(p: &ProjectionMatrix, g: &FunctionalSpec, instance: &str) -> Result<[Report; 2]> {
    let v = g.node_values(&p.space)?;
    Ok(check_mult(p, &v, instance))
}
