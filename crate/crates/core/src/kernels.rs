//! Integrable kernels `(A(x)B(y) - A(y)B(x)) / (x - y)`, built-in families,
//! gauge changes, pushforwards and discretization to projection matrices.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ground::{gauss_legendre, GroundSpace, SpaceKind};
use crate::linalg::{self, ClippedProjection, HermitianMatrix};
use crate::orthopoly::Recurrence;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Near-diagonal split used when no window is known.
pub const DEFAULT_SPLIT: f64 = 1e-6;
/// Split threshold relative to the window width.
pub const SPLIT_FACTOR: f64 = 1e-6;
/// Orthonormality tolerance for explicit frames.
pub const FRAME_TOL: f64 = 1e-10;
/// Tolerance for `det α = 1` in gauge changes.
pub const UNIMODULAR_TOL: f64 = 1e-12;

pub fn scalar_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// A Hermitian kernel on the real line or a discrete subset of it.
pub trait Kernel: Send + Sync {
    fn kind(&self) -> SpaceKind;
    fn name(&self) -> &str;
    fn diag(&self, x: f64) -> Result<f64>;
    /// Evaluates `Π(x, y)`, switching to the diagonal rule at the midpoint
    /// when `0 < |x - y| < h` (continuous kernels only).
    fn eval_split(&self, x: f64, y: f64, h: f64) -> Result<f64>;

    fn eval(&self, x: f64, y: f64) -> Result<f64> {
        self.eval_split(x, y, DEFAULT_SPLIT)
    }
}

#[derive(Clone)]
pub struct IntegrableKernel {
    name: String,
    kind: SpaceKind,
    a: ScalarFn,
    b: ScalarFn,
    da: Option<ScalarFn>,
    db: Option<ScalarFn>,
    diagonal: Option<ScalarFn>,
}

impl fmt::Debug for IntegrableKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrableKernel")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("derivatives", &self.da.is_some())
            .field("explicit_diagonal", &self.diagonal.is_some())
            .finish()
    }
}

impl IntegrableKernel {
    pub fn new(name: impl Into<String>, kind: SpaceKind, a: ScalarFn, b: ScalarFn) -> Self {
        Self {
            name: name.into(),
            kind,
            a,
            b,
            da: None,
            db: None,
            diagonal: None,
        }
    }

    pub fn with_derivatives(mut self, da: ScalarFn, db: ScalarFn) -> Self {
        self.da = Some(da);
        self.db = Some(db);
        self
    }

    /// Explicit diagonal rule. Discrete kernels need one; continuous
    /// kernels otherwise fall back to `A'B - AB'`.
    pub fn with_diagonal(mut self, d: ScalarFn) -> Self {
        self.diagonal = Some(d);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn a(&self, x: f64) -> f64 {
        (self.a)(x)
    }

    pub fn b(&self, x: f64) -> f64 {
        (self.b)(x)
    }

    pub fn da(&self, x: f64) -> Option<f64> {
        self.da.as_ref().map(|f| f(x))
    }

    pub fn db(&self, x: f64) -> Option<f64> {
        self.db.as_ref().map(|f| f(x))
    }

    pub fn has_derivatives(&self) -> bool {
        self.da.is_some() && self.db.is_some()
    }

    pub fn has_explicit_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    /// The off-diagonal formula, without any near-diagonal switch.
    pub fn off_diagonal(&self, x: f64, y: f64) -> f64 {
        (self.a(x) * self.b(y) - self.a(y) * self.b(x)) / (x - y)
    }

    pub(crate) fn parts(&self) -> (ScalarFn, ScalarFn, Option<ScalarFn>, Option<ScalarFn>, Option<ScalarFn>) {
        (
            self.a.clone(),
            self.b.clone(),
            self.da.clone(),
            self.db.clone(),
            self.diagonal.clone(),
        )
    }
}

impl Kernel for IntegrableKernel {
    fn kind(&self) -> SpaceKind {
        self.kind
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn diag(&self, x: f64) -> Result<f64> {
        if let Some(d) = &self.diagonal {
            return Ok(d(x));
        }
        match (&self.da, &self.db, self.kind) {
            (Some(da), Some(db), SpaceKind::Continuous) => Ok(da(x) * self.b(x) - self.a(x) * db(x)),
            _ => Err(Error::MissingDerivative { x, y: x }),
        }
    }

    fn eval_split(&self, x: f64, y: f64, h: f64) -> Result<f64> {
        if x == y {
            return self.diag(x);
        }
        if self.kind == SpaceKind::Continuous && (x - y).abs() < h {
            return self
                .diag(0.5 * (x + y))
                .map_err(|_| Error::MissingDerivative { x, y });
        }
        Ok(self.off_diagonal(x, y))
    }
}

/// Sine kernel `sin(π(x-y)) / (π(x-y))` on the line.
pub fn sine() -> IntegrableKernel {
    let s = libm::sqrt(PI);
    IntegrableKernel::new(
        "sine",
        SpaceKind::Continuous,
        scalar_fn(move |x| libm::sin(PI * x) / s),
        scalar_fn(move |x| libm::cos(PI * x) / s),
    )
    .with_derivatives(
        scalar_fn(move |x| s * libm::cos(PI * x)),
        scalar_fn(move |x| -s * libm::sin(PI * x)),
    )
}

/// Discrete sine kernel `sin(πθ(x-y)) / (π(x-y))` with density `θ`.
pub fn discrete_sine(theta: f64) -> Result<IntegrableKernel> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Invalid(format!("density θ = {theta} must lie in (0, 1)")));
    }
    let s = libm::sqrt(PI);
    Ok(IntegrableKernel::new(
        format!("discrete_sine({theta})"),
        SpaceKind::Discrete,
        scalar_fn(move |x| libm::sin(PI * theta * x) / s),
        scalar_fn(move |x| libm::cos(PI * theta * x) / s),
    )
    .with_diagonal(scalar_fn(move |_| theta)))
}

/// User-supplied `(A, B)`. Continuous kernels need both derivatives;
/// discrete kernels need `diagonal`.
pub fn custom(
    kind: SpaceKind,
    a: ScalarFn,
    b: ScalarFn,
    derivatives: Option<(ScalarFn, ScalarFn)>,
    diagonal: Option<ScalarFn>,
) -> Result<IntegrableKernel> {
    let mut k = IntegrableKernel::new("custom", kind, a, b);
    if let Some((da, db)) = derivatives {
        k = k.with_derivatives(da, db);
    }
    if let Some(d) = diagonal {
        k = k.with_diagonal(d);
    }
    match kind {
        SpaceKind::Continuous if !k.has_derivatives() && !k.has_explicit_diagonal() => {
            Err(Error::Invalid("continuous kernels need dA and dB".into()))
        }
        SpaceKind::Discrete if !k.has_explicit_diagonal() => {
            Err(Error::Invalid("discrete kernels need an explicit diagonal".into()))
        }
        _ => Ok(k),
    }
}

/// Piecewise cubic Hermite interpolant of tabulated values.
#[derive(Debug, Clone, PartialEq)]
pub struct TableFn {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl TableFn {
    /// Slopes default to three-point finite differences.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, slopes: Option<Vec<f64>>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Invalid("table needs at least two rows of equal length".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("table abscissae must be strictly increasing".into()));
        }
        let slopes = match slopes {
            Some(s) if s.len() == n => s,
            Some(_) => return Err(Error::Invalid("derivative column has the wrong length".into())),
            None => finite_difference_slopes(&xs, &ys),
        };
        Ok(Self { xs, ys, slopes })
    }

    fn locate(&self, x: f64) -> Option<(usize, f64, f64)> {
        let n = self.xs.len();
        if !(x >= self.xs[0] && x <= self.xs[n - 1]) {
            return None;
        }
        let i = match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        Some((i, h, (x - self.xs[i]) / h))
    }

    /// Value at `x`; NaN outside the table.
    pub fn value(&self, x: f64) -> f64 {
        let Some((i, h, t)) = self.locate(x) else {
            return f64::NAN;
        };
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }

    /// Derivative of the interpolant; NaN outside the table.
    pub fn derivative(&self, x: f64) -> f64 {
        let Some((i, h, t)) = self.locate(x) else {
            return f64::NAN;
        };
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.ys[i] + (6.0 * t - 6.0 * t2) * self.ys[i + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slopes[i]
            + (3.0 * t2 - 2.0 * t) * self.slopes[i + 1]
    }
}

fn finite_difference_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                (ys[1] - ys[0]) / (xs[1] - xs[0])
            } else if i == n - 1 {
                (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2])
            } else {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let d0 = (ys[i] - ys[i - 1]) / h0;
                let d1 = (ys[i + 1] - ys[i]) / h1;
                (h1 * d0 + h0 * d1) / (h0 + h1)
            }
        })
        .collect()
}

/// Kernel from tabulated `A`, `B` (and optionally `dA`, `dB`).
pub fn custom_table(
    kind: SpaceKind,
    xs: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    derivatives: Option<(Vec<f64>, Vec<f64>)>,
    diagonal: Option<ScalarFn>,
) -> Result<IntegrableKernel> {
    let (da, db) = match derivatives {
        Some((da, db)) => (Some(da), Some(db)),
        None => (None, None),
    };
    let ta = Arc::new(TableFn::new(xs.clone(), a, da)?);
    let tb = Arc::new(TableFn::new(xs, b, db)?);
    let (ta1, ta2, tb1, tb2) = (ta.clone(), ta, tb.clone(), tb);
    let mut k = IntegrableKernel::new(
        "table",
        kind,
        scalar_fn(move |x| ta1.value(x)),
        scalar_fn(move |x| tb1.value(x)),
    );
    if kind == SpaceKind::Continuous {
        k = k.with_derivatives(
            scalar_fn(move |x| ta2.derivative(x)),
            scalar_fn(move |x| tb2.derivative(x)),
        );
    }
    if let Some(d) = diagonal {
        k = k.with_diagonal(d);
    }
    if kind == SpaceKind::Discrete && !k.has_explicit_diagonal() {
        return Err(Error::Invalid("discrete kernels need an explicit diagonal".into()));
    }
    Ok(k)
}

/// Christoffel–Darboux kernel of rank `rank` for orthonormal polynomials
/// of the measure `Σ m_i δ_{x_i}` on a discrete set.
pub fn discrete_op_ensemble(points: &[f64], masses: &[f64], rank: usize) -> Result<IntegrableKernel> {
    if rank == 0 {
        return Err(Error::Invalid("rank must be positive".into()));
    }
    let rec = Arc::new(Recurrence::stieltjes(points, masses, rank)?);
    let pts: Arc<Vec<f64>> = Arc::new(points.to_vec());
    let roots: Arc<Vec<f64>> = Arc::new(masses.iter().map(|m| libm::sqrt(*m)).collect());
    let root = move |x: f64| match pts.binary_search_by(|p| p.total_cmp(&x)) {
        Ok(i) => roots[i],
        Err(_) => f64::NAN,
    };
    op_kernel(
        format!("op_ensemble(rank {rank})"),
        SpaceKind::Discrete,
        rec,
        rank,
        Arc::new(root),
        false,
    )
}

/// Rank-`rank` Legendre ensemble on `[a, b]`: projection onto polynomials
/// of degree below `rank` in `L2([a, b], dx)`.
pub fn legendre_ensemble(a: f64, b: f64, rank: usize) -> Result<IntegrableKernel> {
    if rank == 0 || !(a < b) {
        return Err(Error::Invalid("need rank > 0 and a < b".into()));
    }
    let (t, w) = gauss_legendre(rank + 8);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let x: Vec<f64> = t.iter().map(|t| mid + half * t).collect();
    let m: Vec<f64> = w.iter().map(|w| half * w).collect();
    let rec = Arc::new(Recurrence::stieltjes(&x, &m, rank)?);
    op_kernel(
        format!("legendre(rank {rank})"),
        SpaceKind::Continuous,
        rec,
        rank,
        Arc::new(|_| 1.0),
        true,
    )
}

fn op_kernel(
    name: String,
    kind: SpaceKind,
    rec: Arc<Recurrence>,
    rank: usize,
    root_density: ScalarFn,
    unit_density: bool,
) -> Result<IntegrableKernel> {
    let s = libm::sqrt(rec.a(rank));
    let (r1, r2, r3) = (rec.clone(), rec.clone(), rec.clone());
    let (d1, d2, d3) = (root_density.clone(), root_density.clone(), root_density);
    let mut k = IntegrableKernel::new(
        name,
        kind,
        scalar_fn(move |x| s * d1(x) * r1.values(x)[rank]),
        scalar_fn(move |x| s * d2(x) * r2.values(x)[rank - 1]),
    )
    .with_diagonal(scalar_fn(move |x| {
        let r = d3(x);
        r * r * r3.values(x)[..rank].iter().map(|p| p * p).sum::<f64>()
    }));
    if unit_density {
        let (r4, r5) = (rec.clone(), rec);
        k = k.with_derivatives(
            scalar_fn(move |x| s * r4.values_and_derivatives(x).1[rank]),
            scalar_fn(move |x| s * r5.values_and_derivatives(x).1[rank - 1]),
        );
    }
    Ok(k)
}

/// `(A, B) ↦ (α₁₁A + α₁₂B, α₂₁A + α₂₂B)` for unimodular `α`.
pub fn gauge_transform(k: &IntegrableKernel, alpha: [[f64; 2]; 2]) -> Result<IntegrableKernel> {
    let det = alpha[0][0] * alpha[1][1] - alpha[0][1] * alpha[1][0];
    if (det - 1.0).abs() > UNIMODULAR_TOL {
        return Err(Error::NotUnimodular { det });
    }
    let (a, b, da, db, diagonal) = k.parts();
    let [[p, q], [r, s]] = alpha;
    let (a1, b1) = (a.clone(), b.clone());
    let mut out = IntegrableKernel::new(
        k.name.clone(),
        k.kind,
        scalar_fn(move |x| p * a1(x) + q * b1(x)),
        scalar_fn(move |x| r * a(x) + s * b(x)),
    );
    if let (Some(da), Some(db)) = (da, db) {
        let (da1, db1) = (da.clone(), db.clone());
        out = out.with_derivatives(
            scalar_fn(move |x| p * da1(x) + q * db1(x)),
            scalar_fn(move |x| r * da(x) + s * db(x)),
        );
    }
    if let Some(d) = diagonal {
        out = out.with_diagonal(d);
    }
    Ok(out)
}

/// Rotation by `phi`, a convenient unimodular gauge.
pub fn rotation(phi: f64) -> [[f64; 2]; 2] {
    let (s, c) = (libm::sin(phi), libm::cos(phi));
    [[c, -s], [s, c]]
}

/// An increasing map of the line, equal to the identity outside `support`
/// when a support is given.
#[derive(Clone)]
pub struct Diffeo {
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub support: Option<(f64, f64)>,
}

impl fmt::Debug for Diffeo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffeo").field("support", &self.support).finish()
    }
}

impl Diffeo {
    pub fn new(f: ScalarFn, df: ScalarFn, support: Option<(f64, f64)>) -> Self {
        Self { f, df, support }
    }

    pub fn identity() -> Self {
        Self::new(scalar_fn(|x| x), scalar_fn(|_| 1.0), None)
    }

    pub fn shift(c: f64) -> Self {
        Self::new(scalar_fn(move |x| x + c), scalar_fn(|_| 1.0), None)
    }

    /// `x + δ·φ((x - c)/ρ)` with the smooth bump `φ(t) = exp(1 - 1/(1 - t²))`
    /// on `|t| < 1`, supported on `[c - ρ, c + ρ]`.
    pub fn bump(center: f64, radius: f64, delta: f64) -> Self {
        let f = move |x: f64| x + delta * bump_profile((x - center) / radius).0;
        let df = move |x: f64| 1.0 + delta / radius * bump_profile((x - center) / radius).1;
        Self::new(scalar_fn(f), scalar_fn(df), Some((center - radius, center + radius)))
    }

    pub fn apply(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    /// Probes `probes` points of `window`: positive derivative, strictly
    /// increasing values, identity outside the support.
    pub fn validate(&self, window: (f64, f64), probes: usize) -> Result<()> {
        let (lo, hi) = self.support.unwrap_or(window);
        let n = probes.max(2);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let d = self.derivative(x);
            if !(d > 0.0) {
                return Err(Error::NonPositiveDerivative { x, value: d });
            }
            let fx = self.apply(x);
            if !(fx > prev) {
                return Err(Error::NonInjective { x });
            }
            prev = fx;
        }
        if let Some((a, b)) = self.support {
            let (wa, wb) = window;
            for i in 0..n {
                let x = wa + (wb - wa) * i as f64 / (n - 1) as f64;
                if (x < a || x > b) && (self.apply(x) - x).abs() > 1e-12 * x.abs().max(1.0) {
                    return Err(Error::Invalid(format!("map moves x = {x} outside its support")));
                }
            }
        }
        Ok(())
    }
}

/// `(φ(t), φ'(t))` for `φ(t) = exp(1 - 1/(1 - t²))`.
pub fn bump_profile(t: f64) -> (f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let u = 1.0 - t * t;
    let v = libm::exp(1.0 - 1.0 / u);
    (v, v * (-2.0 * t / (u * u)))
}

/// `(x, y) ↦ √(F'(x)F'(y)) Π(F(x), F(y))`.
#[derive(Clone)]
pub struct PushforwardKernel {
    inner: Arc<dyn Kernel>,
    map: Diffeo,
    name: String,
}

impl fmt::Debug for PushforwardKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PushforwardKernel")
            .field("name", &self.name)
            .field("map", &self.map)
            .finish()
    }
}

impl PushforwardKernel {
    pub fn map(&self) -> &Diffeo {
        &self.map
    }
}

impl Kernel for PushforwardKernel {
    fn kind(&self) -> SpaceKind {
        self.inner.kind()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn diag(&self, x: f64) -> Result<f64> {
        Ok(self.map.derivative(x) * self.inner.diag(self.map.apply(x))?)
    }

    fn eval_split(&self, x: f64, y: f64, h: f64) -> Result<f64> {
        if x == y {
            return self.diag(x);
        }
        let j = libm::sqrt(self.map.derivative(x) * self.map.derivative(y));
        Ok(j * self.inner.eval_split(self.map.apply(x), self.map.apply(y), h)?)
    }
}

/// Pushforward of a continuous kernel, validated on `window`.
pub fn pushforward(k: Arc<dyn Kernel>, map: Diffeo, window: (f64, f64)) -> Result<PushforwardKernel> {
    if k.kind() != SpaceKind::Continuous {
        return Err(Error::KindMismatch { expected: "continuous" });
    }
    map.validate(window, 4096)?;
    let name = format!("pushforward({})", k.name());
    Ok(PushforwardKernel { inner: k, map, name })
}

/// Discretized pushforward on `space`, clipped to a projection.
pub fn pushforward_matrix(
    k: Arc<dyn Kernel>,
    map: Diffeo,
    space: &GroundSpace,
    clip_tol: f64,
) -> Result<ProjectionMatrix> {
    let window = space.window.ok_or(Error::KindMismatch { expected: "continuous" })?;
    let pf = pushforward(k, map, window)?;
    discretize(&pf, space, clip_tol)
}

/// A finite projection `P_ij = √(w_i w_j) Π(x_i, x_j)` on a ground space,
/// with an orthonormal frame of its range.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    pub space: GroundSpace,
    pub matrix: HermitianMatrix,
    /// `n × rank`, orthonormal columns spanning the range.
    pub frame: DMatrix<f64>,
    pub rank: usize,
    /// Largest distance of a pre-clip eigenvalue from `{0, 1}`.
    pub quality: f64,
}

impl ProjectionMatrix {
    pub fn from_clipped(space: GroundSpace, c: ClippedProjection) -> Result<Self> {
        if c.projection.n() != space.len() {
            return Err(Error::Invalid(format!(
                "matrix of size {} on a space of {} points",
                c.projection.n(),
                space.len()
            )));
        }
        Ok(Self {
            space,
            matrix: c.projection,
            frame: c.frame,
            rank: c.rank,
            quality: c.quality,
        })
    }

    /// Clips an arbitrary Hermitian matrix on `space` to a projection.
    /// Projection onto the span of orthonormal columns, given in the
    /// weighted representation (`P = V Vᵀ`).
    pub fn from_orthonormal_frame(space: GroundSpace, frame: DMatrix<f64>) -> Result<Self> {
        if frame.nrows() != space.len() {
            return Err(Error::Invalid(format!(
                "frame has {} rows on a space of {} points",
                frame.nrows(),
                space.len()
            )));
        }
        let r = frame.ncols();
        let defect = linalg::max_abs(&(frame.tr_mul(&frame) - DMatrix::identity(r, r)));
        if defect > FRAME_TOL {
            return Err(Error::Invalid(format!("frame is not orthonormal (defect {defect:e})")));
        }
        Ok(Self {
            matrix: linalg::projection_from_orthonormal(&frame),
            space,
            frame,
            rank: r,
            quality: 0.0,
        })
    }

    pub fn from_matrix(space: GroundSpace, m: &HermitianMatrix, clip_tol: f64) -> Result<Self> {
        Self::from_clipped(space, linalg::project_clip(m, clip_tol)?)
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    /// Kernel value `Π(x_i, x_j)` with the weights divided out.
    pub fn kernel_value(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) / libm::sqrt(self.space.weights[i] * self.space.weights[j])
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    /// Max-entry idempotency defect `‖P² - P‖`.
    pub fn idempotency_defect(&self) -> f64 {
        let p = self.matrix.as_matrix();
        linalg::max_abs(&(p * p - p))
    }
}

/// Weighted Gram matrix `√(w_i w_j) Π(x_i, x_j)` before clipping.
pub fn kernel_matrix(k: &dyn Kernel, space: &GroundSpace) -> Result<HermitianMatrix> {
    if k.kind() != space.kind {
        return Err(Error::KindMismatch {
            expected: match k.kind() {
                SpaceKind::Discrete => "discrete",
                SpaceKind::Continuous => "continuous",
            },
        });
    }
    let h = match space.window {
        Some((a, b)) if space.kind == SpaceKind::Continuous => SPLIT_FACTOR * (b - a),
        _ => 0.0,
    };
    let n = space.len();
    let roots: Vec<f64> = space.weights.iter().map(|w| libm::sqrt(*w)).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = roots[i] * roots[j] * k.eval_split(space.points[i], space.points[j], h)?;
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "kernel is not finite at ({}, {})",
                    space.points[i], space.points[j]
                )));
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(HermitianMatrix::from_symmetric_unchecked(m))
}

/// Discretizes `k` on `space` and clips to an exact projection.
pub fn discretize(k: &dyn Kernel, space: &GroundSpace, clip_tol: f64) -> Result<ProjectionMatrix> {
    let m = kernel_matrix(k, space)?;
    ProjectionMatrix::from_matrix(space.clone(), &m, clip_tol)
}

/// Off-node extension of a discretized projection. Each retained
/// eigenvector `v` of the weighted kernel matrix, with Rayleigh quotient
/// `λ`, extends to `φ(x) = λ⁻¹ Σ_j √w_j K(x, x_j) v_j`, and the extension
/// is `Σ φ(x) φ(y)`. It agrees with `P_ij / √(w_i w_j)` at the nodes.
#[derive(Clone)]
pub struct NystromKernel {
    inner: Arc<dyn Kernel>,
    points: Vec<f64>,
    sqrt_w: Vec<f64>,
    coef: DMatrix<f64>,
    name: String,
}

impl NystromKernel {
    pub fn new(k: Arc<dyn Kernel>, p: &ProjectionMatrix) -> Result<Self> {
        let km = kernel_matrix(k.as_ref(), &p.space)?;
        let mut coef = p.frame.clone();
        for mut col in coef.column_iter_mut() {
            let lambda = col.dot(&(km.as_matrix() * &col));
            if !(lambda > 0.0) {
                return Err(Error::DiscretizationQuality { eigenvalue: lambda, tol: 0.0 });
            }
            col /= lambda;
        }
        let name = format!("nystrom({})", k.name());
        Ok(Self {
            inner: k,
            points: p.space.points.clone(),
            sqrt_w: p.space.weights.iter().map(|w| libm::sqrt(*w)).collect(),
            coef,
            name,
        })
    }

    /// `φ(x)` for every retained eigenvector.
    pub fn features(&self, x: f64) -> Result<DVector<f64>> {
        let mut row = DVector::zeros(self.points.len());
        for (j, (&xj, &s)) in self.points.iter().zip(&self.sqrt_w).enumerate() {
            row[j] = s * self.inner.eval(x, xj)?;
        }
        Ok(self.coef.tr_mul(&row))
    }
}

impl Kernel for NystromKernel {
    fn kind(&self) -> SpaceKind {
        self.inner.kind()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn diag(&self, x: f64) -> Result<f64> {
        Ok(self.features(x)?.norm_squared())
    }

    fn eval_split(&self, x: f64, y: f64, _h: f64) -> Result<f64> {
        Ok(self.features(x)?.dot(&self.features(y)?))
    }
}

/// Projection onto the span of `vectors` (columns of node values),
/// orthonormal in the weighted inner product of `space`.
pub fn projection_from_frame(space: &GroundSpace, vectors: &DMatrix<f64>) -> Result<ProjectionMatrix> {
    if vectors.nrows() != space.len() {
        return Err(Error::Invalid(format!(
            "frame has {} rows on a space of {} points",
            vectors.nrows(),
            space.len()
        )));
    }
    let mut frame = vectors.clone();
    for (i, w) in space.weights.iter().enumerate() {
        let s = libm::sqrt(*w);
        frame.row_mut(i).scale_mut(s);
    }
    let r = frame.ncols();
    let gram = frame.transpose() * &frame;
    let defect = linalg::max_abs(&(gram - DMatrix::identity(r, r)));
    if defect > FRAME_TOL {
        return Err(Error::Invalid(format!("frame is not orthonormal (defect {defect:e})")));
    }
    let matrix = linalg::projection_from_orthonormal(&frame);
    Ok(ProjectionMatrix {
        space: space.clone(),
        matrix,
        frame,
        rank: r,
        quality: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    /// `max |Πf(q) - ⟨f, v_q⟩|` over probes and nodes.
    pub reproducing_residual: f64,
    /// `|tr(χ_B P χ_B) - Σ_B w Π(q,q)|`.
    pub trace_residual: f64,
}

/// Numerical check of the reproducing property and the trace identity.
/// Kernel values come from `kernel` when given, else from the matrix.
/// Probes are node-value vectors, projected onto the range first.
pub fn check_assumption(
    p: &ProjectionMatrix,
    kernel: Option<&dyn Kernel>,
    probes: &[DVector<f64>],
    subset: &[usize],
) -> Result<AssumptionReport> {
    let n = p.n();
    let sp = &p.space;
    let roots: Vec<f64> = sp.weights.iter().map(|w| libm::sqrt(*w)).collect();
    let raw = match kernel {
        Some(k) => {
            let m = kernel_matrix(k, sp)?;
            DMatrix::from_fn(n, n, |i, j| m.get(i, j) / (roots[i] * roots[j]))
        }
        None => DMatrix::from_fn(n, n, |i, j| p.kernel_value(i, j)),
    };
    let pm = p.matrix.as_matrix();
    let mut reproducing = 0.0f64;
    for u in probes {
        if u.len() != n {
            return Err(Error::Invalid("probe length differs from the space size".into()));
        }
        let weighted = DVector::from_fn(n, |i, _| roots[i] * u[i]);
        let phi = pm * weighted;
        let pphi = pm * &phi;
        for q in 0..n {
            let lhs = pphi[q] / roots[q];
            let rhs: f64 = (0..n).map(|j| roots[j] * phi[j] * raw[(j, q)]).sum();
            reproducing = reproducing.max((lhs - rhs).abs());
        }
    }
    let tr: f64 = subset.iter().map(|&i| pm[(i, i)]).sum();
    let integral: f64 = subset.iter().map(|&i| sp.weights[i] * raw[(i, i)]).sum();
    Ok(AssumptionReport {
        reproducing_residual: reproducing,
        trace_residual: (tr - integral).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::QuadratureRule;
    use alloc::vec;

    #[test]
    fn sine_values() {
        let s = sine();
        assert!((s.eval(0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((s.eval(0.0, 0.5).unwrap() - 2.0 / PI).abs() < 1e-15);
        assert!(s.eval(1.5, 0.5).unwrap().abs() < 1e-15);
        // near-diagonal branch
        assert!((s.eval(0.3, 0.3 + 1e-9).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_sine_values() {
        let k = discrete_sine(0.5).unwrap();
        assert!((k.eval(1.0, 0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(k.eval(2.0, 0.0).unwrap().abs() < 1e-15);
        for x in -5..=5 {
            assert_eq!(k.diag(x as f64).unwrap(), 0.5);
        }
        assert!(discrete_sine(1.0).is_err());
        assert!(discrete_sine(0.0).is_err());
    }

    #[test]
    fn gauge_examples() {
        let s = sine();
        assert!(gauge_transform(&s, [[1.0, 1.0], [1.0, 1.0]]).is_err());
        let g = gauge_transform(&s, rotation(PI / 3.0)).unwrap();
        for (x, y) in [(0.1, 2.3), (-1.7, 0.4), (3.0, 3.0), (0.0, 0.5)] {
            assert!((g.eval(x, y).unwrap() - s.eval(x, y).unwrap()).abs() < 1e-12);
        }
        let d = discrete_sine(0.5).unwrap();
        let sh = gauge_transform(&d, [[1.0, 1.0], [0.0, 1.0]]).unwrap();
        for (x, y) in [(1.0, 0.0), (3.0, -4.0), (2.0, 2.0)] {
            assert!((sh.eval(x, y).unwrap() - d.eval(x, y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_examples() {
        let s: Arc<dyn Kernel> = Arc::new(sine());
        let id = pushforward(s.clone(), Diffeo::identity(), (-5.0, 5.0)).unwrap();
        let sh = pushforward(s.clone(), Diffeo::shift(1.0), (-5.0, 5.0)).unwrap();
        for (x, y) in [(0.1, 2.3), (-1.7, 0.4)] {
            assert!((id.eval(x, y).unwrap() - s.eval(x, y).unwrap()).abs() < 1e-15);
            assert!((sh.eval(x, y).unwrap() - s.eval(x, y).unwrap()).abs() < 1e-12);
        }
        // slope 2 on [0, 0.5], then slope 0 would not be injective; use slope 2/0 split over [0,1]
        let pl = Diffeo::new(
            scalar_fn(|x| if x < 0.0 { x } else if x < 0.5 { 2.0 * x } else { x + 0.5 }),
            scalar_fn(|x| if (0.0..0.5).contains(&x) { 2.0 } else { 1.0 }),
            None,
        );
        let k = pushforward(s.clone(), pl, (-1.0, 2.0)).unwrap();
        assert!((k.eval(0.25, 0.25).unwrap() - 2.0).abs() < 1e-15);
        let bad = Diffeo::new(scalar_fn(|x| -x), scalar_fn(|_| -1.0), None);
        assert!(matches!(
            pushforward(s, bad, (0.0, 1.0)),
            Err(Error::NonPositiveDerivative { .. })
        ));
    }

    #[test]
    fn bump_is_increasing() {
        let d = Diffeo::bump(0.0, 1.0, 0.3);
        d.validate((-20.0, 20.0), 10_000).unwrap();
        assert_eq!(d.apply(1.5), 1.5);
        assert!((d.apply(0.0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn discretize_discrete_sine() {
        let k = discrete_sine(0.5).unwrap();
        let sp = GroundSpace::integers(-10, 10).unwrap();
        let m = kernel_matrix(&k, &sp).unwrap();
        assert!((m.trace() - 10.5).abs() < 1e-12);
        let p = discretize(&k, &sp, 0.01).unwrap();
        assert!(p.rank == 10 || p.rank == 11);
        assert!(p.idempotency_defect() < 1e-9);
    }

    #[test]
    fn discretize_sine_window() {
        let sp = GroundSpace::quadrature(0.0, 10.0, 200, QuadratureRule::GaussLegendre).unwrap();
        let p = discretize(&sine(), &sp, 0.01).unwrap();
        assert_eq!(p.rank, 10);
        assert!((p.trace() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn frames() {
        let sp = GroundSpace::integers(1, 2).unwrap();
        let v = DMatrix::from_column_slice(2, 1, &[1.0 / libm::sqrt(2.0); 2]);
        let p = projection_from_frame(&sp, &v).unwrap();
        assert!((p.get(0, 1) - 0.5).abs() < 1e-15);
        let sp3 = GroundSpace::integers(1, 3).unwrap();
        let e = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = projection_from_frame(&sp3, &e).unwrap();
        assert_eq!(p.diagonal(), vec![1.0, 1.0, 0.0]);
        let bad = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(projection_from_frame(&sp3, &bad).is_err());
    }

    #[test]
    fn legendre_kernel_is_exact_on_gauss_grid() {
        let k = legendre_ensemble(-1.0, 1.0, 4).unwrap();
        let sp = GroundSpace::quadrature(-1.0, 1.0, 12, QuadratureRule::GaussLegendre).unwrap();
        let m = kernel_matrix(&k, &sp).unwrap();
        let p = discretize(&k, &sp, 1e-9).unwrap();
        assert_eq!(p.rank, 4);
        assert!(p.quality < 1e-12);
        assert!(linalg::max_abs(&(m.as_matrix() - p.matrix.as_matrix())) < 1e-12);
        // K(x,x) = Σ (k + 1/2) P_k(x)^2 at x = 1 is Σ (k + 1/2) = 8
        assert!((k.diag(1.0).unwrap() - 8.0).abs() < 1e-12);
        let off = k.eval(0.3, -0.2).unwrap();
        let cd = k.off_diagonal(0.3, -0.2);
        assert!((off - cd).abs() < 1e-15);
        assert!((k.diag(0.3).unwrap() - (k.da(0.3).unwrap() * k.b(0.3) - k.a(0.3) * k.db(0.3).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn table_kernel_matches_sine() {
        let xs: Vec<f64> = (0..=400).map(|i| -2.0 + 0.01 * i as f64).collect();
        let s = sine();
        let a: Vec<f64> = xs.iter().map(|&x| s.a(x)).collect();
        let b: Vec<f64> = xs.iter().map(|&x| s.b(x)).collect();
        let da: Vec<f64> = xs.iter().map(|&x| s.da(x).unwrap()).collect();
        let db: Vec<f64> = xs.iter().map(|&x| s.db(x).unwrap()).collect();
        let t = custom_table(SpaceKind::Continuous, xs, a, b, Some((da, db)), None).unwrap();
        assert!((t.eval(0.123, -0.77).unwrap() - s.eval(0.123, -0.77).unwrap()).abs() < 1e-6);
        assert!((t.eval(0.5, 0.5).unwrap() - 1.0).abs() < 1e-4);
        assert!(t.eval(3.0, 0.0).unwrap().is_nan());
    }

    #[test]
    fn assumption_on_exact_frame() {
        let sp = GroundSpace::integers(0, 3).unwrap();
        let c = 0.5;
        let v = DMatrix::from_column_slice(4, 1, &[c, c, c, c]);
        let p = projection_from_frame(&sp, &v).unwrap();
        let probes = [DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0])];
        let rep = check_assumption(&p, None, &probes, &[0, 1]).unwrap();
        assert!(rep.reproducing_residual < 1e-10);
        assert!(rep.trace_residual < 1e-10);
    }

    #[test]
    fn assumption_reports_clipping() {
        let k = discrete_sine(0.5).unwrap();
        let sp = GroundSpace::integers(-20, 20).unwrap();
        let p = discretize(&k, &sp, 0.01).unwrap();
        let all: Vec<usize> = (0..sp.len()).collect();
        let rep = check_assumption(&p, Some(&k), &[], &all).unwrap();
        assert!((rep.trace_residual - (p.rank as f64 - 20.5).abs()).abs() < 1e-9);
    }

    #[test]
    fn nystrom_extension() {
        let sp = GroundSpace::quadrature(-1.0, 1.0, 12, QuadratureRule::GaussLegendre).unwrap();
        let k = legendre_ensemble(-1.0, 1.0, 5).unwrap();
        let p = discretize(&k, &sp, 1e-8).unwrap();
        let ext = NystromKernel::new(Arc::new(k.clone()), &p).unwrap();
        for i in [0, 3, 7] {
            for j in [1, 3, 11] {
                assert!((ext.eval(sp.points[i], sp.points[j]).unwrap() - p.kernel_value(i, j)).abs() < 1e-12);
            }
        }
        for (x, y) in [(0.123, -0.77), (0.5, 0.5), (-0.99, 0.31)] {
            assert!((ext.eval(x, y).unwrap() - k.eval(x, y).unwrap()).abs() < 1e-12);
        }
    }
}
