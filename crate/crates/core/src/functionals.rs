//! Additive and multiplicative functionals, the transformed kernel `Π^g`,
//! regularized (normalized) multiplicative functionals and the closed-form
//! Radon–Nikodym derivatives built from them.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::{Configuration, GroundSpace, SpaceKind};
use crate::kernels::{Diffeo, Kernel, ProjectionMatrix, ScalarFn};
use crate::linalg::{self, HermitianMatrix};
use crate::palm::{self, Fault};

/// Spectral slack when clipping `Π^g`.
pub const TRANSFORM_CLIP_TOL: f64 = 1e-6;
/// Split point of the staged factorization `g = g₁g₂g₃`.
pub const STAGE_EPS: f64 = 0.25;

/// Values of `f` or `g` on the ground space.
#[derive(Clone)]
pub enum Values {
    /// One value per node.
    Table(Vec<f64>),
    Function(ScalarFn),
}

impl fmt::Debug for Values {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Values::Table(v) => f.debug_tuple("Table").field(v).finish(),
            Values::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// One truncation stage: keep `|x| <= radius` and `min |x - pole| >= eps`.
/// `None` means no truncation in that direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub radius: Option<f64>,
    pub eps: Option<f64>,
}

impl Stage {
    pub const FULL: Stage = Stage {
        radius: None,
        eps: None,
    };

    /// Linked schedule `R_k = R₀ 2^k`, `ε_k = ε₀ 2^{-k}` for `k < count`.
    pub fn schedule(r0: f64, eps0: f64, count: usize) -> Vec<Stage> {
        (0..count)
            .map(|k| Stage {
                radius: Some(r0 * libm::pow(2.0, k as f64)),
                eps: Some(eps0 * libm::pow(2.0, -(k as f64))),
            })
            .collect()
    }

    /// Radii only (discrete truncation).
    pub fn radii(rs: &[f64]) -> Vec<Stage> {
        rs.iter()
            .map(|&r| Stage {
                radius: Some(r),
                eps: None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalSpec {
    pub values: Values,
    /// Node indices where the factor is forced to zero.
    pub exclusions: Vec<usize>,
    /// Centres of the `ε` exclusion neighbourhoods.
    pub poles: Vec<f64>,
    pub stages: Vec<Stage>,
}

impl FunctionalSpec {
    pub fn table(values: Vec<f64>) -> Self {
        Self::from_values(Values::Table(values))
    }

    pub fn function(f: ScalarFn) -> Self {
        Self::from_values(Values::Function(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::function(crate::kernels::scalar_fn(move |_| c))
    }

    fn from_values(values: Values) -> Self {
        Self {
            values,
            exclusions: Vec::new(),
            poles: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn with_exclusions(mut self, nodes: Vec<usize>) -> Self {
        self.exclusions = nodes;
        self
    }

    pub fn with_poles(mut self, poles: Vec<f64>) -> Self {
        self.poles = poles;
        self
    }

    pub fn with_stages(mut self, stages: Vec<Stage>) -> Result<Self> {
        for w in stages.windows(2) {
            let grow = match (w[0].radius, w[1].radius) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => false,
            };
            let shrink = match (w[0].eps, w[1].eps) {
                (Some(a), Some(b)) => a > b,
                (Some(_), None) => true,
                (None, None) => true,
                (None, Some(_)) => false,
            };
            if !grow || !shrink {
                return Err(Error::Invalid(
                    "truncation radii must increase and ε must decrease".into(),
                ));
            }
        }
        self.stages = stages;
        Ok(self)
    }

    /// Untruncated values at the nodes, exclusions applied.
    pub fn node_values(&self, space: &GroundSpace) -> Result<Vec<f64>> {
        let mut v = match &self.values {
            Values::Table(t) => {
                if t.len() != space.len() {
                    return Err(Error::Invalid(format!(
                        "table has {} values for {} nodes",
                        t.len(),
                        space.len()
                    )));
                }
                t.clone()
            }
            Values::Function(f) => space.points.iter().map(|&x| f(x)).collect(),
        };
        for &i in &self.exclusions {
            if i >= v.len() {
                return Err(Error::Invalid(format!("exclusion node {i} out of range")));
            }
            v[i] = 0.0;
        }
        Ok(v)
    }

    /// Whether each node lies inside the stage window: `|x| <= R`, at
    /// positive distance from every pole and at least `ε` from it.
    pub fn stage_mask(&self, space: &GroundSpace, stage: Stage) -> Vec<bool> {
        space
            .points
            .iter()
            .map(|&x| {
                let inside = stage.radius.is_none_or(|r| x.abs() <= r);
                let clear = self.poles.iter().all(|&q| {
                    let d = (x - q).abs();
                    d > 0.0 && stage.eps.is_none_or(|e| d >= e)
                });
                inside && clear
            })
            .collect()
    }

    /// Values of the stage-truncated factor: 1 outside the stage window,
    /// 0 at exclusions.
    pub fn stage_values(&self, space: &GroundSpace, stage: Stage) -> Result<Vec<f64>> {
        let base = self.node_values_unchecked(space)?;
        let mask = self.stage_mask(space, stage);
        Ok((0..space.len())
            .map(|i| {
                if self.exclusions.contains(&i) {
                    0.0
                } else if mask[i] {
                    base[i]
                } else {
                    1.0
                }
            })
            .collect())
    }

    fn node_values_unchecked(&self, space: &GroundSpace) -> Result<Vec<f64>> {
        match &self.values {
            Values::Table(t) if t.len() == space.len() => Ok(t.clone()),
            Values::Table(t) => Err(Error::Invalid(format!(
                "table has {} values for {} nodes",
                t.len(),
                space.len()
            ))),
            Values::Function(f) => Ok(space
                .points
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    if self.exclusions.contains(&i) || self.poles.contains(&x) {
                        0.0
                    } else {
                        f(x)
                    }
                })
                .collect()),
        }
    }

    fn stages_or_full(&self) -> Vec<Stage> {
        if self.stages.is_empty() {
            alloc::vec![Stage::FULL]
        } else {
            self.stages.clone()
        }
    }
}

fn check_nonnegative(g: &[f64]) -> Result<()> {
    if let Some(v) = g.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Invalid(format!("multiplicative factor {v} is not finite and nonnegative")));
    }
    Ok(())
}

fn one_plus(g: &[f64], p: &ProjectionMatrix) -> DMatrix<f64> {
    let n = p.n();
    let mut m = p.matrix.as_matrix().clone();
    for i in 0..n {
        m.row_mut(i).scale_mut(g[i] - 1.0);
        m[(i, i)] += 1.0;
    }
    m
}

/// `Σ f(x_i) P_ii`.
pub fn additive_expectation(f: &FunctionalSpec, p: &ProjectionMatrix) -> Result<f64> {
    let v = f.node_values(&p.space)?;
    Ok(v.iter().enumerate().map(|(i, fi)| fi * p.get(i, i)).sum())
}

/// `½ Σ (f_i - f_j)² P_ij²`.
pub fn additive_variance(f: &FunctionalSpec, p: &ProjectionMatrix) -> Result<f64> {
    let v = f.node_values(&p.space)?;
    let n = p.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = v[i] - v[j];
            let pij = p.get(i, j);
            s += d * d * pij * pij;
        }
    }
    Ok(s)
}

/// `S_f(X) - E S_f`, one entry per truncation stage (or one untruncated).
pub fn normalized_additive(f: &FunctionalSpec, p: &ProjectionMatrix, x: &Configuration) -> Result<Vec<(Stage, f64)>> {
    let mut out = Vec::new();
    let base = f.node_values(&p.space)?;
    for stage in f.stages_or_full() {
        let mask = f.stage_mask(&p.space, stage);
        let v: Vec<f64> = base.iter().zip(&mask).map(|(&b, &k)| if k { b } else { 0.0 }).collect();
        let e: f64 = v.iter().enumerate().map(|(i, fi)| fi * p.get(i, i)).sum();
        let s: f64 = x.indices().iter().map(|&i| v[i]).sum();
        out.push((stage, s - e));
    }
    Ok(out)
}

/// `det(I + (g - 1)P)`, the expectation of `∏ g(x)`. Clamped at zero
/// against roundoff; exactly zero when the factor vanishes almost surely.
pub fn multiplicative_expectation(g: &FunctionalSpec, p: &ProjectionMatrix) -> Result<f64> {
    let v = g.node_values(&p.space)?;
    fredholm(&v, p)
}

/// `det(I + (g - 1)P)` for node values `g`.
pub fn fredholm(g: &[f64], p: &ProjectionMatrix) -> Result<f64> {
    check_nonnegative(g)?;
    // det(I + (g-1)VVᵀ) = det(I_r + Vᵀ(g-1)V)
    let v = &p.frame;
    let mut dv = v.clone();
    for (i, gi) in g.iter().enumerate() {
        dv.row_mut(i).scale_mut(gi - 1.0);
    }
    let m = DMatrix::identity(p.rank, p.rank) + v.tr_mul(&dv);
    let d = linalg::determinant(&m);
    if !d.is_finite() {
        return Err(Error::Invalid("Fredholm determinant overflowed".into()));
    }
    Ok(d.max(0.0))
}

/// `Π^g = √g P (I + (g-1)P)⁻¹ √g`, the projection onto `√g · range(P)`.
pub fn transformed_kernel(g: &FunctionalSpec, p: &ProjectionMatrix) -> Result<ProjectionMatrix> {
    let v = g.node_values(&p.space)?;
    transformed_from_values(&v, p)
}

pub fn transformed_from_values(g: &[f64], p: &ProjectionMatrix) -> Result<ProjectionMatrix> {
    check_nonnegative(g)?;
    let n = p.n();
    let root: Vec<f64> = g.iter().map(|v| libm::sqrt(*v)).collect();
    let m = one_plus(g, p);
    let rhs = DMatrix::from_fn(n, n, |i, j| if i == j { root[i] } else { 0.0 });
    let s = linalg::solve(&m, &rhs, linalg::CONDITION_CAP)?;
    let mut t = p.matrix.as_matrix() * s;
    for (i, r) in root.iter().enumerate() {
        t.row_mut(i).scale_mut(*r);
    }
    let sym = (&t + t.transpose()) * 0.5;
    ProjectionMatrix::from_matrix(p.space.clone(), &HermitianMatrix::new(sym)?, TRANSFORM_CLIP_TOL)
}

/// The factors `g₁ = g on |g-1| <= ε`, `g₂ = g on g < 1-ε`,
/// `g₃ = g on g > 1+ε`, each equal to 1 elsewhere.
pub fn factor_stages(g: &[f64], eps: f64) -> [Vec<f64>; 3] {
    let pick = |keep: &dyn Fn(f64) -> bool| g.iter().map(|&v| if keep(v) { v } else { 1.0 }).collect();
    [
        pick(&|v| (v - 1.0).abs() <= eps),
        pick(&|v| v < 1.0 - eps),
        pick(&|v| v > 1.0 + eps),
    ]
}

/// Result of the staged computation: normalizers multiply, transforms chain.
#[derive(Debug, Clone)]
pub struct StagedTransform {
    pub expectation: f64,
    pub kernel: ProjectionMatrix,
    pub factors: [f64; 3],
}

/// `E Ψ_g` and `Π^g` through `g = g₁g₂g₃`, each factor applied to the
/// kernel transformed by the previous ones.
pub fn staged_transform(g: &[f64], p: &ProjectionMatrix, eps: f64) -> Result<StagedTransform> {
    let parts = factor_stages(g, eps);
    let mut kernel = p.clone();
    let mut factors = [1.0; 3];
    for (k, part) in parts.iter().enumerate() {
        if part.iter().all(|&v| v == 1.0) {
            continue;
        }
        factors[k] = fredholm(part, &kernel)?;
        if factors[k] <= 0.0 {
            return Err(Error::ZeroNormalizer { stage: k });
        }
        kernel = transformed_from_values(part, &kernel)?;
    }
    Ok(StagedTransform {
        expectation: factors.iter().product(),
        kernel,
        factors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `max_q max(0, Π^g(q,q) - g(q) ‖(I+(g-1)P)⁻¹‖ Π(q,q))`.
    pub max_violation: f64,
    pub inverse_norm: f64,
}

/// Checks `Π^g(q,q) <= g(q) ‖(I + (g-1)Π)⁻¹‖ Π(q,q)` at every node.
pub fn diagonal_bound_check(g: &FunctionalSpec, p: &ProjectionMatrix) -> Result<BoundReport> {
    let v = g.node_values(&p.space)?;
    let pg = transformed_from_values(&v, p)?;
    let m = one_plus(&v, p);
    let inverse_norm = 1.0 / linalg::smallest_singular_value(&m);
    let max_violation = (0..p.n())
        .map(|q| (pg.get(q, q) - v[q] * inverse_norm * p.get(q, q)).max(0.0))
        .fold(0.0, f64::max);
    Ok(BoundReport {
        max_violation,
        inverse_norm,
    })
}

/// `E Ψ_g · exp(-E Σ log g)`, at least 1 by Jensen's inequality.
pub fn jensen_normalizer(g: &[f64], p: &ProjectionMatrix) -> Result<f64> {
    if g.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("Jensen normalizer needs strictly positive g".into()));
    }
    let e = fredholm(g, p)?;
    let mean_log: f64 = g.iter().enumerate().map(|(i, v)| libm::log(*v) * p.get(i, i)).sum();
    Ok(e * libm::exp(-mean_log))
}

/// One row of a truncation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    pub eps: Option<f64>,
    #[serde(rename = "C")]
    pub normalizer: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularized {
    pub value: f64,
    pub stages: Vec<StageRow>,
    /// `|Ψ̄_K - Ψ̄_{K-1}|` at the final stage.
    pub cauchy: Option<f64>,
}

/// Truncated factors and normalizing constants, reusable across
/// configurations drawn from the same conditioned kernel.
#[derive(Debug, Clone)]
pub struct PreparedFunctional {
    stages: Vec<Stage>,
    values: Vec<Vec<f64>>,
    constants: Vec<f64>,
    exclusions: Vec<usize>,
}

impl PreparedFunctional {
    pub fn new(g: &FunctionalSpec, p_cond: &ProjectionMatrix) -> Result<Self> {
        let stages = g.stages_or_full();
        let mut values = Vec::with_capacity(stages.len());
        let mut constants = Vec::with_capacity(stages.len());
        for (k, &stage) in stages.iter().enumerate() {
            let v = g.stage_values(&p_cond.space, stage)?;
            let e = fredholm(&v, p_cond)?;
            if !(e > 0.0) {
                return Err(Error::ZeroNormalizer { stage: k });
            }
            constants.push(1.0 / e);
            values.push(v);
        }
        Ok(Self {
            stages,
            values,
            constants,
            exclusions: g.exclusions.clone(),
        })
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn evaluate(&self, x: &Configuration) -> Result<Regularized> {
        if let Some(i) = x.indices().iter().find(|i| self.exclusions.contains(i)) {
            return Err(Error::Invalid(format!("configuration contains excluded node {i}")));
        }
        let stages: Vec<StageRow> = self
            .stages
            .iter()
            .zip(&self.values)
            .zip(&self.constants)
            .map(|((s, v), &c)| StageRow {
                radius: s.radius,
                eps: s.eps,
                normalizer: c,
                psi: c * x.indices().iter().map(|&i| v[i]).product::<f64>(),
            })
            .collect();
        let k = stages.len();
        let value = stages[k - 1].psi;
        let cauchy = (k >= 2).then(|| (stages[k - 1].psi - stages[k - 2].psi).abs());
        Ok(Regularized { value, stages, cauchy })
    }
}

/// `Ψ̄ = C ∏_{x∈X} g_stage(x)` with `C = 1 / E_{P_cond} ∏ g_stage`, per stage.
pub fn regularized_mult_functional(g: &FunctionalSpec, p_cond: &ProjectionMatrix, x: &Configuration) -> Result<Regularized> {
    PreparedFunctional::new(g, p_cond)?.evaluate(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RNReport {
    pub value: f64,
    pub psi_bar: f64,
    pub det_ratio: f64,
    pub density_ratio: f64,
    pub stages: Vec<StageRow>,
}

impl RNReport {
    pub fn unit() -> Self {
        Self {
            value: 1.0,
            psi_bar: 1.0,
            det_ratio: 1.0,
            density_ratio: 1.0,
            stages: Vec::new(),
        }
    }

    fn assemble(reg: Regularized, det_ratio: f64, density_ratio: f64) -> Self {
        Self {
            value: reg.value * det_ratio * density_ratio,
            psi_bar: reg.value,
            det_ratio,
            density_ratio,
            stages: reg.stages,
        }
    }
}

/// `P(particles ⊂ X, holes ∩ X = ∅) = det [[K_SS, K_SH], [-K_HS, I - K_HH]]`
/// for a discrete kernel.
pub fn cylinder_probability(p: &ProjectionMatrix, particles: &[usize], holes: &[usize]) -> f64 {
    let idx: Vec<usize> = particles.iter().chain(holes).copied().collect();
    let k = idx.len();
    if k == 0 {
        return 1.0;
    }
    let m = particles.len();
    let mat = DMatrix::from_fn(k, k, |a, b| {
        let v = p.get(idx[a], idx[b]);
        if a < m {
            v
        } else if a == b {
            1.0 - v
        } else {
            -v
        }
    });
    linalg::determinant(&mat).max(0.0)
}

/// Image of `x` under the permutation sending `points[i]` to `points[sigma[i]]`.
pub fn permute_configuration(x: &Configuration, points: &[usize], sigma: &[usize]) -> Configuration {
    x.map_nodes(|i| match points.iter().position(|&p| p == i) {
        Some(k) => points[sigma[k]],
        None => i,
    })
}

fn check_permutation(sigma: &[usize], l: usize) -> Result<()> {
    let mut seen = alloc::vec![false; l];
    if sigma.len() != l {
        return Err(Error::Invalid(format!("permutation of length {} on {l} points", sigma.len())));
    }
    for &s in sigma {
        if s >= l || seen[s] {
            return Err(Error::Invalid("sigma is not a permutation".into()));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Radon–Nikodym derivative of `P ∘ σ` against `P` at `X`, where `σ`
/// permutes `points` (`points[i] ↦ points[sigma[i]]`), `X` holds particles
/// at `points[..m]` and none at `points[m..]`.
///
/// `psi_bar` is the regularized functional of
/// `∏_{i<m} ((x - σ(p_i))/(x - p_i))² χ_{E∖{p}}` normalized under the
/// kernel conditioned on that cylinder; `det_ratio` is the ratio of the
/// cylinder probabilities of the image and source cylinders, which reduces
/// to `det Π(σp_i, σp_j) / det Π(p_i, p_j)` when there are no holes.
pub fn rn_permutation(
    p: &ProjectionMatrix,
    points: &[usize],
    m: usize,
    sigma: &[usize],
    x: &Configuration,
    stages: &[Stage],
) -> Result<RNReport> {
    rn_permutation_with(p, points, m, sigma, x, stages, Fault::None)
}

#[allow(clippy::too_many_arguments)]
pub fn rn_permutation_with(
    p: &ProjectionMatrix,
    points: &[usize],
    m: usize,
    sigma: &[usize],
    x: &Configuration,
    stages: &[Stage],
    fault: Fault,
) -> Result<RNReport> {
    if p.space.kind != SpaceKind::Discrete {
        return Err(Error::KindMismatch { expected: "discrete" });
    }
    let l = points.len();
    if m > l {
        return Err(Error::Invalid(format!("m = {m} exceeds l = {l}")));
    }
    check_permutation(sigma, l)?;
    for (k, &pt) in points.iter().enumerate() {
        if points[..k].contains(&pt) {
            return Err(Error::Invalid("points must be distinct".into()));
        }
        if (k < m) != x.contains(pt) {
            return Err(Error::NotInCylinder(format!(
                "node {pt} must be {}",
                if k < m { "occupied" } else { "empty" }
            )));
        }
    }
    if sigma.iter().enumerate().all(|(i, &s)| i == s) {
        return Ok(RNReport::unit());
    }
    let (particles, holes) = points.split_at(m);
    let p_cond = palm::conditional_kernel_with(p, particles, holes, fault)?;
    let src = cylinder_probability(p, particles, holes);
    if !(src > 0.0) {
        return Err(Error::ZeroProbability);
    }
    let img_particles: Vec<usize> = (0..m).map(|i| points[sigma[i]]).collect();
    let img_holes: Vec<usize> = (m..l).map(|i| points[sigma[i]]).collect();
    let img = cylinder_probability(p, &img_particles, &img_holes);

    let pts = &p.space.points;
    let pairs: Vec<(f64, f64)> = (0..m).map(|i| (pts[img_particles[i]], pts[particles[i]])).collect();
    let g = crate::kernels::scalar_fn(move |x| {
        pairs
            .iter()
            .map(|&(a, b)| {
                let r = (x - a) / (x - b);
                r * r
            })
            .product()
    });
    let spec = FunctionalSpec::function(g)
        .with_exclusions(points.to_vec())
        .with_stages(stages.to_vec())?;
    let erased = x.without(particles);
    let reg = regularized_mult_functional(&spec, &p_cond, &erased)?;
    Ok(RNReport::assemble(reg, img / src, 1.0))
}

/// Same as [`rn_permutation`], with the particle/hole split read off `X`.
/// When all moved points are occupied, or all empty, `σ` maps the cylinder
/// onto itself and the functional is identically 1, so the value is exactly 1.
pub fn rn_relabel(
    p: &ProjectionMatrix,
    points: &[usize],
    sigma: &[usize],
    x: &Configuration,
    stages: &[Stage],
) -> Result<RNReport> {
    rn_relabel_with(p, points, sigma, x, stages, Fault::None)
}

pub fn rn_relabel_with(
    p: &ProjectionMatrix,
    points: &[usize],
    sigma: &[usize],
    x: &Configuration,
    stages: &[Stage],
    fault: Fault,
) -> Result<RNReport> {
    check_permutation(sigma, points.len())?;
    let order: Vec<usize> = (0..points.len())
        .filter(|&k| x.contains(points[k]))
        .chain((0..points.len()).filter(|&k| !x.contains(points[k])))
        .collect();
    let m = order.iter().filter(|&&k| x.contains(points[k])).count();
    if m == 0 || m == points.len() {
        return Ok(RNReport::unit());
    }
    let reordered: Vec<usize> = order.iter().map(|&k| points[k]).collect();
    let mut inverse = alloc::vec![0; points.len()];
    for (new, &old) in order.iter().enumerate() {
        inverse[old] = new;
    }
    let sigma_new: Vec<usize> = order.iter().map(|&old| inverse[sigma[old]]).collect();
    rn_permutation_with(p, &reordered, m, &sigma_new, x, stages, fault)
}

/// Transposition of nodes `pi`, `qi`: exactly 1 when both or neither are
/// occupied, otherwise the permutation formula with the occupied point first.
pub fn rn_transposition(p: &ProjectionMatrix, pi: usize, qi: usize, x: &Configuration) -> Result<RNReport> {
    rn_transposition_with(p, pi, qi, x, Fault::None)
}

pub fn rn_transposition_with(
    p: &ProjectionMatrix,
    pi: usize,
    qi: usize,
    x: &Configuration,
    fault: Fault,
) -> Result<RNReport> {
    if pi == qi {
        return Err(Error::Invalid("transposition needs two distinct nodes".into()));
    }
    match (x.contains(pi), x.contains(qi)) {
        (true, true) | (false, false) => Ok(RNReport::unit()),
        (false, true) => rn_permutation_with(p, &[qi, pi], 1, &[1, 0], x, &[], fault),
        (true, false) => rn_permutation_with(p, &[pi, qi], 1, &[1, 0], x, &[], fault),
    }
}

/// Everything in the diffeomorphism formula that depends only on the
/// nodes `X ∩ V`.
#[derive(Debug, Clone)]
pub struct DiffeoContext {
    pub nodes: Vec<usize>,
    pub prepared: Option<PreparedFunctional>,
    pub det_ratio: f64,
    pub density_ratio: f64,
}

impl DiffeoContext {
    pub fn new(
        p: &ProjectionMatrix,
        kernel: &dyn Kernel,
        map: &Diffeo,
        nodes: &[usize],
        stages: &[Stage],
    ) -> Result<Self> {
        if p.space.kind != SpaceKind::Continuous {
            return Err(Error::KindMismatch { expected: "continuous" });
        }
        if nodes.is_empty() {
            return Ok(Self {
                nodes: Vec::new(),
                prepared: None,
                det_ratio: 1.0,
                density_ratio: 1.0,
            });
        }
        let pts = &p.space.points;
        let qs: Vec<f64> = nodes.iter().map(|&i| pts[i]).collect();
        let fq: Vec<f64> = qs.iter().map(|&q| map.apply(q)).collect();
        let l = qs.len();
        let mut num = DMatrix::zeros(l, l);
        let mut den = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in 0..l {
                num[(i, j)] = kernel.eval(fq[i], fq[j])?;
                den[(i, j)] = kernel.eval(qs[i], qs[j])?;
            }
        }
        let d = linalg::determinant(&den);
        if !(d.abs() > 0.0) {
            return Err(Error::Singular {
                smallest_singular_value: linalg::smallest_singular_value(&den),
                condition: f64::INFINITY,
            });
        }
        let det_ratio = linalg::determinant(&num) / d;
        let density_ratio = qs.iter().map(|&q| map.derivative(q)).product();
        let p_cond = palm::palm_frame(p, nodes)?;
        let pairs: Vec<(f64, f64)> = fq.iter().copied().zip(qs.iter().copied()).collect();
        let g = crate::kernels::scalar_fn(move |x| {
            pairs
                .iter()
                .map(|&(a, b)| {
                    let r = (x - a) / (x - b);
                    r * r
                })
                .product()
        });
        let spec = FunctionalSpec::function(g)
            .with_poles(qs)
            .with_exclusions(nodes.to_vec())
            .with_stages(stages.to_vec())?;
        Ok(Self {
            nodes: nodes.to_vec(),
            prepared: Some(PreparedFunctional::new(&spec, &p_cond)?),
            det_ratio,
            density_ratio,
        })
    }

    pub fn report(&self, x: &Configuration) -> Result<RNReport> {
        let Some(prep) = &self.prepared else {
            return Ok(RNReport::unit());
        };
        let reg = prep.evaluate(&x.without(&self.nodes))?;
        Ok(RNReport::assemble(reg, self.det_ratio, self.density_ratio))
    }
}

/// Nodes of `x` inside the support of `map` (the whole window if none).
pub fn nodes_in_support(p: &ProjectionMatrix, map: &Diffeo, x: &Configuration) -> Vec<usize> {
    let pts = &p.space.points;
    x.indices()
        .iter()
        .copied()
        .filter(|&i| match map.support {
            Some((a, b)) => pts[i] > a && pts[i] < b,
            None => true,
        })
        .collect()
}

/// Radon–Nikodym derivative of `P ∘ F` against `P` at `X` for a map equal to
/// the identity outside its support `V`.
pub fn rn_diffeo(
    p: &ProjectionMatrix,
    kernel: &dyn Kernel,
    map: &Diffeo,
    x: &Configuration,
    stages: &[Stage],
) -> Result<RNReport> {
    let window = p.space.window.ok_or(Error::KindMismatch { expected: "continuous" })?;
    map.validate(window, 4096)?;
    let nodes = nodes_in_support(p, map, x);
    DiffeoContext::new(p, kernel, map, &nodes, stages)?.report(x)
}
