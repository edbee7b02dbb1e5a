//! Palm (particle) and hole conditioning of projection kernels, their
//! integrable forms, and the subspace relations between conditionings at
//! different points.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ground::SpaceKind;
use crate::kernels::{scalar_fn, IntegrableKernel, Kernel, ProjectionMatrix};
use crate::linalg::{self, HermitianMatrix};

/// Absolute tolerance on `Π(q,q)` and `1 - Π(q,q)`.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Spectral slack allowed when re-clipping a conditioned matrix.
pub const CONDITION_CLIP_TOL: f64 = 1e-6;
/// Support obstruction threshold on `σ_min((I - P)_SS)`.
pub const OBSTRUCTION_TOL: f64 = 1e-10;

/// Deliberate corruption of a formula, used to calibrate the checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Flips the sign of the rank-one correction in the Palm kernel.
    PalmSignFlip,
}

/// One conditioning step at a node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Particle(usize),
    Hole(usize),
}

impl Condition {
    pub fn node(&self) -> usize {
        match *self {
            Condition::Particle(i) | Condition::Hole(i) => i,
        }
    }
}

fn check_node(p: &ProjectionMatrix, q: usize) -> Result<()> {
    if q >= p.n() {
        return Err(Error::Invalid(format!("node index {q} outside a space of {} points", p.n())));
    }
    Ok(())
}

fn reclip(p: &ProjectionMatrix, m: DMatrix<f64>) -> Result<ProjectionMatrix> {
    let h = HermitianMatrix::new(m)?;
    ProjectionMatrix::from_matrix(p.space.clone(), &h, CONDITION_CLIP_TOL)
}

// In-place rank-one updates; return false in the degenerate branch.
fn palm_update(m: &mut DMatrix<f64>, q: usize, fault: Fault) -> bool {
    let d = m[(q, q)];
    if d <= DEGENERACY_TOL {
        return false;
    }
    let col = m.column(q).into_owned();
    let sign = match fault {
        Fault::None => -1.0,
        Fault::PalmSignFlip => 1.0,
    };
    m.ger(sign / d, &col, &col, 1.0);
    m.row_mut(q).fill(0.0);
    m.column_mut(q).fill(0.0);
    true
}

fn hole_update(m: &mut DMatrix<f64>, q: usize, point: f64) -> Result<()> {
    let d = m[(q, q)];
    if 1.0 - d <= DEGENERACY_TOL {
        return Err(Error::ConditioningImpossible { point, value: d });
    }
    let col = m.column(q).into_owned();
    m.ger(1.0 / (1.0 - d), &col, &col, 1.0);
    m.row_mut(q).fill(0.0);
    m.column_mut(q).fill(0.0);
    Ok(())
}

/// `Π^q = Π - Π(·,q)Π(q,·)/Π(q,q)`; unchanged when `Π(q,q)` is degenerate.
pub fn palm_kernel(p: &ProjectionMatrix, q: usize) -> Result<ProjectionMatrix> {
    palm_kernel_with(p, q, Fault::None)
}

pub fn palm_kernel_with(p: &ProjectionMatrix, q: usize, fault: Fault) -> Result<ProjectionMatrix> {
    palm_iterated_with(p, &[q], fault)
}

/// Sequential Palm conditioning at distinct nodes, clipped once.
pub fn palm_iterated(p: &ProjectionMatrix, qs: &[usize]) -> Result<ProjectionMatrix> {
    palm_iterated_with(p, qs, Fault::None)
}

pub fn palm_iterated_with(p: &ProjectionMatrix, qs: &[usize], fault: Fault) -> Result<ProjectionMatrix> {
    check_distinct(p, qs)?;
    if qs.is_empty() {
        return Ok(p.clone());
    }
    let mut m = p.matrix.as_matrix().clone();
    let mut changed = false;
    for &q in qs {
        changed |= palm_update(&mut m, q, fault);
    }
    if !changed {
        return Ok(p.clone());
    }
    reclip(p, m)
}

/// `Π^q̆ = Π + Π(·,q)Π(q,·)/(1 - Π(q,q))` with row and column `q` removed.
pub fn hole_kernel(p: &ProjectionMatrix, q: usize) -> Result<ProjectionMatrix> {
    if p.space.kind != SpaceKind::Discrete {
        return Err(Error::KindMismatch { expected: "discrete" });
    }
    check_node(p, q)?;
    let mut m = p.matrix.as_matrix().clone();
    if m[(q, q)] <= DEGENERACY_TOL {
        return Ok(p.clone());
    }
    hole_update(&mut m, q, p.space.points[q])?;
    reclip(p, m)
}

/// Conditions on particles at `particles` and holes at `holes`.
pub fn conditional_kernel(p: &ProjectionMatrix, particles: &[usize], holes: &[usize]) -> Result<ProjectionMatrix> {
    conditional_kernel_with(p, particles, holes, Fault::None)
}

pub fn conditional_kernel_with(
    p: &ProjectionMatrix,
    particles: &[usize],
    holes: &[usize],
    fault: Fault,
) -> Result<ProjectionMatrix> {
    let steps: Vec<Condition> = particles
        .iter()
        .map(|&i| Condition::Particle(i))
        .chain(holes.iter().map(|&i| Condition::Hole(i)))
        .collect();
    condition_sequence_with(p, &steps, fault)
}

/// Applies conditioning steps in the given order, clipping once at the end.
pub fn condition_sequence(p: &ProjectionMatrix, steps: &[Condition]) -> Result<ProjectionMatrix> {
    condition_sequence_with(p, steps, Fault::None)
}

pub fn condition_sequence_with(p: &ProjectionMatrix, steps: &[Condition], fault: Fault) -> Result<ProjectionMatrix> {
    let nodes: Vec<usize> = steps.iter().map(Condition::node).collect();
    check_distinct(p, &nodes)?;
    if steps.is_empty() {
        return Ok(p.clone());
    }
    if steps.iter().any(|s| matches!(s, Condition::Hole(_))) && p.space.kind != SpaceKind::Discrete {
        return Err(Error::KindMismatch { expected: "discrete" });
    }
    check_obstruction(p, &nodes)?;
    let mut m = p.matrix.as_matrix().clone();
    for s in steps {
        match *s {
            Condition::Particle(q) => {
                if !palm_update(&mut m, q, fault) {
                    return Err(Error::DegenerateDiagonal {
                        point: p.space.points[q],
                        value: m[(q, q)],
                    });
                }
            }
            Condition::Hole(q) => {
                if m[(q, q)] > DEGENERACY_TOL {
                    hole_update(&mut m, q, p.space.points[q])?;
                } else {
                    m.row_mut(q).fill(0.0);
                    m.column_mut(q).fill(0.0);
                }
            }
        }
    }
    reclip(p, m)
}

/// Smallest singular value of `(I - P)` restricted to `nodes`; it vanishes
/// exactly when the range of `P` contains a function supported there.
pub fn obstruction_margin(p: &ProjectionMatrix, nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 1.0;
    }
    let k = nodes.len();
    let block = DMatrix::from_fn(k, k, |a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        delta - p.get(nodes[a], nodes[b])
    });
    linalg::smallest_singular_value(&block)
}

fn check_obstruction(p: &ProjectionMatrix, nodes: &[usize]) -> Result<()> {
    let s = obstruction_margin(p, nodes);
    if s <= OBSTRUCTION_TOL {
        return Err(Error::SupportObstruction { smallest_singular_value: s });
    }
    Ok(())
}

fn check_distinct(p: &ProjectionMatrix, nodes: &[usize]) -> Result<()> {
    for (k, &i) in nodes.iter().enumerate() {
        check_node(p, i)?;
        if nodes[..k].contains(&i) {
            return Err(Error::Invalid(format!("conditioning node {i} repeated")));
        }
    }
    Ok(())
}

// Rotates (A, B) so that A(q) = 0, B(q) = n > 0.
fn rotated(k: &IntegrableKernel, q: f64) -> Result<(IntegrableKernel, f64)> {
    let (aq, bq) = (k.a(q), k.b(q));
    let n = libm::sqrt(aq * aq + bq * bq);
    if !(n > 0.0) {
        return Err(Error::Invalid(format!("A and B vanish simultaneously at {q}")));
    }
    let alpha = [[bq / n, -aq / n], [aq / n, bq / n]];
    Ok((crate::kernels::gauge_transform(k, alpha)?, n))
}

/// Palm kernel at several nodes through the frame: keeps the vectors of
/// the range that vanish at every `q`. Equal to [`palm_iterated`] when no
/// node is degenerate, without an eigendecomposition.
pub fn palm_frame(p: &ProjectionMatrix, qs: &[usize]) -> Result<ProjectionMatrix> {
    check_distinct(p, qs)?;
    if qs.is_empty() {
        return Ok(p.clone());
    }
    let l = qs.len();
    let r = p.rank;
    let vq = DMatrix::from_fn(l, r, |a, b| p.frame[(qs[a], b)]);
    // pivots of the sequential conditioning are the Cholesky pivots of P_QQ
    let g = &vq * vq.transpose();
    let mut c = g.clone();
    for k in 0..l {
        let d = c[(k, k)];
        if d <= DEGENERACY_TOL {
            return Err(Error::DegenerateDiagonal {
                point: p.space.points[qs[k]],
                value: d,
            });
        }
        for i in k + 1..l {
            for j in k + 1..l {
                c[(i, j)] -= c[(i, k)] * c[(k, j)] / d;
            }
        }
    }
    let sol = linalg::solve(&g, &vq, linalg::CONDITION_CAP)?;
    let keep = DMatrix::identity(r, r) - vq.transpose() * sol;
    let (basis, rank) = linalg::orthonormal_basis(&keep, 1e-8);
    if rank != r - l {
        return Err(Error::Invalid(format!("conditioned rank {rank}, expected {}", r - l)));
    }
    let frame = &p.frame * basis.columns(0, rank);
    ProjectionMatrix::from_orthonormal_frame(p.space.clone(), frame)
}

/// Integrable form of the Palm kernel at `q`:
/// `A^q = A_rot`, `B^q = B_rot - n Π(·,q) / Π(q,q)` where the rotation
/// makes `A_rot(q) = 0` and `n = |(A(q), B(q))|`.
pub fn palm_integrable_form(k: &IntegrableKernel, q: f64) -> Result<IntegrableKernel> {
    let pqq = k.diag(q)?;
    if pqq <= DEGENERACY_TOL {
        return Err(Error::DegenerateDiagonal { point: q, value: pqq });
    }
    let (rot, n) = rotated(k, q)?;
    let (ka, kd) = (k.clone(), k.clone());
    let (r1, r2) = (rot.clone(), rot);
    let a = scalar_fn(move |x| r1.a(x));
    let b = scalar_fn(move |x| {
        let pxq = ka.eval(x, q).unwrap_or(f64::NAN);
        r2.b(x) - n * pxq / pqq
    });
    let diag = scalar_fn(move |x| {
        let pxq = kd.eval(x, q).unwrap_or(f64::NAN);
        kd.diag(x).unwrap_or(f64::NAN) - pxq * pxq / pqq
    });
    Ok(IntegrableKernel::new(format!("palm({}, {q})", k.name()), k.kind(), a, b).with_diagonal(diag))
}

/// Integrable form of the hole kernel at `q` (discrete spaces), vanishing at `q`.
pub fn hole_integrable_form(k: &IntegrableKernel, q: f64) -> Result<IntegrableKernel> {
    if k.kind() != SpaceKind::Discrete {
        return Err(Error::KindMismatch { expected: "discrete" });
    }
    let pqq = k.diag(q)?;
    let c = 1.0 - pqq;
    if c <= DEGENERACY_TOL {
        return Err(Error::ConditioningImpossible { point: q, value: pqq });
    }
    let (rot, n) = rotated(k, q)?;
    let (ka, kd) = (k.clone(), k.clone());
    let (r1, r2) = (rot.clone(), rot);
    let a = scalar_fn(move |x| if x == q { 0.0 } else { r1.a(x) });
    let b = scalar_fn(move |x| {
        if x == q {
            return 0.0;
        }
        r2.b(x) + n * ka.eval(x, q).unwrap_or(f64::NAN) / c
    });
    let diag = scalar_fn(move |x| {
        if x == q {
            return 0.0;
        }
        let pxq = kd.eval(x, q).unwrap_or(f64::NAN);
        kd.diag(x).unwrap_or(f64::NAN) + pxq * pxq / c
    });
    Ok(IntegrableKernel::new(format!("hole({}, {q})", k.name()), k.kind(), a, b).with_diagonal(diag))
}

/// Rank-one update of a kernel at the point `q` by direct evaluation:
/// `Π(x,y) - Π(x,q)Π(q,y)/Π(q,q)` for a particle, and
/// `Π(x,y) + Π(x,q)Π(q,y)/(1 - Π(q,q))` off `q` (zero on `q`) for a hole.
#[derive(Clone)]
pub struct UpdatedKernel {
    inner: Arc<dyn Kernel>,
    q: f64,
    hole: bool,
    denom: f64,
    name: String,
}

impl UpdatedKernel {
    pub fn particle(inner: Arc<dyn Kernel>, q: f64) -> Result<Self> {
        let pqq = inner.diag(q)?;
        if pqq <= DEGENERACY_TOL {
            return Err(Error::DegenerateDiagonal { point: q, value: pqq });
        }
        let name = format!("palm({}, {q})", inner.name());
        Ok(Self { inner, q, hole: false, denom: pqq, name })
    }

    pub fn hole(inner: Arc<dyn Kernel>, q: f64) -> Result<Self> {
        if inner.kind() != SpaceKind::Discrete {
            return Err(Error::KindMismatch { expected: "discrete" });
        }
        let pqq = inner.diag(q)?;
        if 1.0 - pqq <= DEGENERACY_TOL {
            return Err(Error::ConditioningImpossible { point: q, value: pqq });
        }
        let name = format!("hole({}, {q})", inner.name());
        Ok(Self { inner, q, hole: true, denom: 1.0 - pqq, name })
    }
}

impl Kernel for UpdatedKernel {
    fn kind(&self) -> SpaceKind {
        self.inner.kind()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn diag(&self, x: f64) -> Result<f64> {
        self.eval_split(x, x, 0.0)
    }

    fn eval_split(&self, x: f64, y: f64, h: f64) -> Result<f64> {
        if self.hole && (x == self.q || y == self.q) {
            return Ok(0.0);
        }
        let base = self.inner.eval_split(x, y, h)?;
        let corr = self.inner.eval_split(x, self.q, h)? * self.inner.eval_split(self.q, y, h)? / self.denom;
        Ok(if self.hole { base + corr } else { base - corr })
    }
}

/// Largest `|form(x,y) - direct(x,y)|` over `pairs`.
pub fn form_agreement(form: &dyn Kernel, direct: &dyn Kernel, pairs: &[(f64, f64)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &(x, y) in pairs {
        let d = (form.eval(x, y)? - direct.eval(x, y)?).abs();
        if !d.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Palm conditioning at points that need not be nodes, through the
/// Schur complement `P - C G⁻¹ Cᵀ` with `C_ij = √w_i Π(x_i, q_j)` and
/// `G = Π(q_i, q_j)`.
pub fn palm_off_node(p: &ProjectionMatrix, kernel: &dyn Kernel, qs: &[f64]) -> Result<ProjectionMatrix> {
    if qs.is_empty() {
        return Ok(p.clone());
    }
    let n = p.n();
    let l = qs.len();
    let sp = &p.space;
    let c = DMatrix::from_fn(n, l, |i, j| {
        libm::sqrt(sp.weights[i]) * kernel.eval(sp.points[i], qs[j]).unwrap_or(f64::NAN)
    });
    let mut g = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            g[(i, j)] = kernel.eval(qs[i], qs[j])?;
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("kernel not finite at the conditioning points".into()));
    }
    let sol = linalg::solve(&g, &c.transpose(), linalg::CONDITION_CAP)?;
    let m = p.matrix.as_matrix() - &c * sol;
    let h = HermitianMatrix::new(m)?;
    ProjectionMatrix::from_matrix(sp.clone(), &h, CONDITION_CLIP_TOL)
}

fn projection_of_scaled_frame(frame: &DMatrix<f64>, scale: &[f64], expect_rank: usize) -> Result<HermitianMatrix> {
    let mut m = frame.clone();
    for (i, s) in scale.iter().enumerate() {
        m.row_mut(i).scale_mut(*s);
    }
    let (q, rank) = linalg::orthonormal_basis(&m, 1e-12);
    if rank != expect_rank {
        return Err(Error::Invalid(format!(
            "multiplied frame has rank {rank}, expected {expect_rank}"
        )));
    }
    let basis = q.columns(0, rank).into_owned();
    Ok(linalg::projection_from_orthonormal(&basis))
}

/// Max-entry distance between the projection onto
/// `χ_{E∖{p,q}} (x-p)/(x-q) · range(Π^{q,p̆})` and `Π^{p,q̆}`.
pub fn discrete_subspace_defect(p: &ProjectionMatrix, pi: usize, qi: usize) -> Result<f64> {
    if pi == qi {
        return Err(Error::Invalid("the two points must differ".into()));
    }
    let from = conditional_kernel(p, &[qi], &[pi])?;
    let to = conditional_kernel(p, &[pi], &[qi])?;
    let xp = p.space.points[pi];
    let xq = p.space.points[qi];
    let scale: Vec<f64> = p
        .space
        .points
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == pi || i == qi { 0.0 } else { (x - xp) / (x - xq) })
        .collect();
    let proj = projection_of_scaled_frame(&from.frame, &scale, from.rank)?;
    Ok(linalg::max_abs(&(proj.as_matrix() - to.matrix.as_matrix())))
}

/// Max-entry distance between the projection onto
/// `∏(x-p_i)/(x-q_i) · range(Π^{q_1..q_l})` and `Π^{p_1..p_l}`, with both
/// conditionings taken at off-node points. Nodes coinciding with some
/// `q_i` are dropped from the multiplied frame and from the comparison.
pub fn continuous_subspace_defect(
    p: &ProjectionMatrix,
    kernel: &dyn Kernel,
    ps: &[f64],
    qs: &[f64],
) -> Result<f64> {
    if ps.len() != qs.len() {
        return Err(Error::Invalid("need as many points p as points q".into()));
    }
    let from = palm_off_node(p, kernel, qs)?;
    let to = palm_off_node(p, kernel, ps)?;
    let pts = &p.space.points;
    let dropped: Vec<bool> = pts.iter().map(|x| qs.contains(x)).collect();
    let scale: Vec<f64> = pts
        .iter()
        .zip(&dropped)
        .map(|(&x, &d)| {
            if d {
                0.0
            } else {
                ps.iter().zip(qs).map(|(a, b)| (x - a) / (x - b)).product()
            }
        })
        .collect();
    let proj = projection_of_scaled_frame(&from.frame, &scale, from.rank)?;
    let n = p.n();
    let mut defect: f64 = 0.0;
    for i in (0..n).filter(|&i| !dropped[i]) {
        for j in (0..n).filter(|&j| !dropped[j]) {
            defect = defect.max((proj.get(i, j) - to.get(i, j)).abs());
        }
    }
    Ok(defect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::{GroundSpace, QuadratureRule};
    use crate::kernels::{discrete_sine, discretize, legendre_ensemble, projection_from_frame, sine};

    fn rank_one() -> ProjectionMatrix {
        let sp = GroundSpace::integers(1, 2).unwrap();
        let v = DMatrix::from_column_slice(2, 1, &[1.0 / libm::sqrt(2.0); 2]);
        projection_from_frame(&sp, &v).unwrap()
    }

    fn diag(d: &[f64]) -> ProjectionMatrix {
        let sp = GroundSpace::integers(1, d.len() as i64).unwrap();
        ProjectionMatrix::from_matrix(sp, &HermitianMatrix::diagonal(d), 1e-9).unwrap()
    }

    fn dsine(n: i64) -> ProjectionMatrix {
        let sp = GroundSpace::integers(-n, n).unwrap();
        discretize(&discrete_sine(0.5).unwrap(), &sp, 0.01).unwrap()
    }

    #[test]
    fn palm_examples() {
        let p = palm_kernel(&rank_one(), 0).unwrap();
        assert_eq!(p.rank, 0);
        assert!(p.matrix.max_abs() < 1e-15);
        let d = diag(&[1.0, 0.0]);
        let u = palm_kernel(&d, 1).unwrap();
        assert_eq!(u.matrix, d.matrix);
        let s = dsine(10);
        let q = s.space.node_index(0.0).unwrap();
        let pq = palm_kernel(&s, q).unwrap();
        assert_eq!(pq.rank, s.rank - 1);
        assert!((0..s.n()).all(|i| pq.get(q, i).abs() < 1e-12));
        assert!(pq.idempotency_defect() < 1e-9);
    }

    #[test]
    fn iterated_examples() {
        let r = rank_one();
        assert_eq!(palm_iterated(&r, &[]).unwrap().matrix, r.matrix);
        assert!(palm_iterated(&r, &[0, 1]).unwrap().matrix.max_abs() < 1e-15);
        let s = dsine(10);
        let a = s.space.node_index(-3.0).unwrap();
        let b = s.space.node_index(4.0).unwrap();
        let ab = palm_iterated(&s, &[a, b]).unwrap();
        let ba = palm_iterated(&s, &[b, a]).unwrap();
        assert!(linalg::max_abs(&(ab.matrix.as_matrix() - ba.matrix.as_matrix())) < 1e-10);
        assert!(palm_iterated(&s, &[a, a]).is_err());
    }

    #[test]
    fn hole_examples() {
        let h = hole_kernel(&rank_one(), 0).unwrap();
        assert!((h.get(1, 1) - 1.0).abs() < 1e-12);
        assert!(h.get(0, 0).abs() < 1e-15 && h.get(0, 1).abs() < 1e-15);
        let d = diag(&[0.0, 1.0]);
        assert_eq!(hole_kernel(&d, 0).unwrap().matrix, d.matrix);
        assert!(matches!(
            hole_kernel(&diag(&[1.0, 0.0]), 0),
            Err(Error::ConditioningImpossible { .. })
        ));
    }

    #[test]
    fn mixed_conditioning() {
        let s = dsine(8);
        let a = s.space.node_index(-2.0).unwrap();
        let b = s.space.node_index(3.0).unwrap();
        let c = conditional_kernel(&s, &[a], &[b]).unwrap();
        assert_eq!(c.rank, s.rank - 1);
        for i in 0..s.n() {
            assert!(c.get(a, i).abs() < 1e-12 && c.get(b, i).abs() < 1e-12);
        }
        let other = condition_sequence(&s, &[Condition::Hole(b), Condition::Particle(a)]).unwrap();
        assert!(linalg::max_abs(&(c.matrix.as_matrix() - other.matrix.as_matrix())) < 1e-10);
        assert_eq!(conditional_kernel(&s, &[], &[]).unwrap().matrix, s.matrix);
    }

    #[test]
    fn obstruction_detected() {
        // range contains e_1, which is supported on the first node
        let d = diag(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            conditional_kernel(&d, &[], &[0]),
            Err(Error::SupportObstruction { .. })
        ));
    }

    #[test]
    fn palm_form_sine_at_zero() {
        let s = sine();
        let f = palm_integrable_form(&s, 0.0).unwrap();
        for x in [0.3, -1.2, 2.7] {
            assert!((f.a(x) - s.a(x)).abs() < 1e-15);
            let expected = s.b(x) - s.b(0.0) * s.b(0.0) * s.a(x) / (x - 0.0);
            assert!((f.b(x) - expected).abs() < 1e-12);
        }
        assert!(f.b(0.0).abs() < 1e-15);
        let (x, y) = (0.7, -1.9);
        let direct = s.eval(x, y).unwrap() - s.eval(x, 0.0).unwrap() * s.eval(0.0, y).unwrap();
        assert!((f.eval(x, y).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn hole_form_matches_matrix() {
        let k = discrete_sine(0.5).unwrap();
        let s = dsine(10);
        let q = s.space.node_index(0.0).unwrap();
        let h = hole_kernel(&s, q).unwrap();
        let f = hole_integrable_form(&k, 0.0).unwrap();
        // the clipped matrix differs from the raw hole kernel; compare raw forms
        let mut raw = crate::kernels::kernel_matrix(&k, &s.space).unwrap().into_matrix();
        hole_update(&mut raw, q, 0.0).unwrap();
        for i in 0..s.n() {
            for j in 0..s.n() {
                let (x, y) = (s.space.points[i], s.space.points[j]);
                assert!((f.eval(x, y).unwrap() - raw[(i, j)]).abs() < 1e-10);
            }
        }
        assert_eq!(h.rank, s.rank);
    }

    #[test]
    fn legendre_continuous_relation() {
        let k = legendre_ensemble(-1.0, 1.0, 6).unwrap();
        let sp = GroundSpace::quadrature(-1.0, 1.0, 40, QuadratureRule::GaussLegendre).unwrap();
        let p = discretize(&k, &sp, 1e-9).unwrap();
        let d = continuous_subspace_defect(&p, &k, &[0.31, -0.55], &[-0.12, 0.77]).unwrap();
        assert!(d < 1e-10, "defect {d}");
    }

    #[test]
    fn forms_agree_with_direct_updates() {
        let s = sine();
        let pairs = [(0.7, -1.9), (0.25, 0.25), (3.1, 0.4), (-0.5, 2.2)];
        let form = palm_integrable_form(&s, 0.4).unwrap();
        let direct = UpdatedKernel::particle(Arc::new(s), 0.4).unwrap();
        assert!(form_agreement(&form, &direct, &pairs).unwrap() < 1e-12);
        let d = discrete_sine(0.5).unwrap();
        let ints = [(1.0, -3.0), (2.0, 2.0), (0.0, 5.0), (-4.0, 7.0)];
        let form = hole_integrable_form(&d, 2.0).unwrap();
        let direct = UpdatedKernel::hole(Arc::new(d), 2.0).unwrap();
        assert!(form_agreement(&form, &direct, &ints).unwrap() < 1e-12);
    }

    #[test]
    fn palm_frame_matches_rank_one_updates() {
        let k = legendre_ensemble(-1.0, 1.0, 6).unwrap();
        let sp = GroundSpace::quadrature(-1.0, 1.0, 30, QuadratureRule::GaussLegendre).unwrap();
        let p = discretize(&k, &sp, 1e-9).unwrap();
        let a = palm_iterated(&p, &[3, 17, 20]).unwrap();
        let b = palm_frame(&p, &[3, 17, 20]).unwrap();
        assert_eq!(a.rank, b.rank);
        assert!(linalg::max_abs(&(a.matrix.as_matrix() - b.matrix.as_matrix())) < 1e-12);
        let d = diag(&[0.0, 1.0]);
        assert!(matches!(palm_frame(&d, &[0]), Err(Error::DegenerateDiagonal { .. })));
    }
}
