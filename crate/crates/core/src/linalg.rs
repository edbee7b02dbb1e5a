//! Dense real-symmetric linear algebra used by every kernel transform.
//!
//! All kernels handled by this crate are real-symmetric, so the scalar field
//! is `f64` throughout. Matrices are stored as `nalgebra::DMatrix<f64>`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Asymmetry accepted by [`HermitianMatrix::new`] before symmetrizing,
/// relative to `max(1, ‖M‖_max)`.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Default cap on the 1-norm condition estimate accepted by [`solve`].
pub const CONDITION_CAP: f64 = 1e12;

/// Eigenvalue threshold used by [`project_clip`] to round to 0 or 1.
pub const CLIP_THRESHOLD: f64 = 0.5;

/// A real symmetric matrix. Construction enforces exact symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(DMatrix<f64>);

impl HermitianMatrix {
    /// Validates squareness and near-symmetry, then symmetrizes exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let scale = max_abs(&m).max(1.0);
        let asym = max_abs(&(&m - m.transpose()));
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotHermitian {
                max_asymmetry: asym,
            });
        }
        Ok(Self(symmetrize(m)))
    }

    /// Builds a symmetric matrix from the upper triangle of `f`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*lambda);
        }
        &scaled * v.transpose()
    }
}

pub fn eigendecompose(m: &HermitianMatrix) -> Result<SpectralDecomposition> {
    let n = m.n();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let max_iter = 100 * n.max(10);
    let eig = SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, max_iter).ok_or_else(
        || {
            let a = m.as_matrix();
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[(i, j)] * a[(i, j)];
                    }
                }
            }
            Error::NoConvergence {
                residual: libm::sqrt(off),
            }
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Determinant via LU with partial pivoting. Works for any square matrix.
pub fn determinant(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// `(sign, ln|det|)` via LU; sign is 0 for an exactly singular matrix.
pub fn log_determinant(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    if n == 0 {
        return (1.0, 0.0);
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut log = 0.0;
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if d < 0.0 {
            sign = -sign;
        }
        log += libm::log(d.abs());
    }
    (sign, log)
}

/// Solves `M x = b` for a general square `M`, rejecting systems whose
/// 1-norm condition estimate exceeds `cap`.
pub fn solve(m: &DMatrix<f64>, b: &DMatrix<f64>, cap: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() != b.nrows() {
        return Err(Error::Invalid(alloc::format!(
            "right-hand side has {} rows, matrix has {}",
            b.nrows(),
            m.nrows()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(b.clone());
    }
    let lu = m.clone().lu();
    let singular = || Error::Singular {
        smallest_singular_value: smallest_singular_value(m),
        condition: f64::INFINITY,
    };
    if !lu.is_invertible() {
        return Err(singular());
    }
    let lu_t = m.transpose().lu();
    let cond = norm1(m) * inverse_norm1_estimate(&lu, &lu_t, n);
    if !(cond.is_finite() && cond <= cap) {
        return Err(Error::Singular {
            smallest_singular_value: smallest_singular_value(m),
            condition: cond,
        });
    }
    let mut x = lu.solve(b).ok_or_else(singular)?;
    // one step of iterative refinement
    let r = b - m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x)
}

pub fn solve_vector(m: &DMatrix<f64>, b: &DVector<f64>, cap: f64) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve(m, &bm, cap)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

/// Rounds the spectrum of `m` to {0, 1} at [`CLIP_THRESHOLD`].
///
/// Returns the projection together with its orthonormal frame (the kept
/// eigenvectors) and the maximum pre-clip distance of an eigenvalue from
/// {0, 1}.
pub fn project_clip(m: &HermitianMatrix, tol: f64) -> Result<ClippedProjection> {
    let spec = eigendecompose(m)?;
    let mut quality: f64 = 0.0;
    for &lambda in &spec.eigenvalues {
        if lambda < -tol || lambda > 1.0 + tol {
            return Err(Error::DiscretizationQuality {
                eigenvalue: lambda,
                tol,
            });
        }
        quality = quality.max(lambda.abs().min((1.0 - lambda).abs()));
    }
    let rank = spec
        .eigenvalues
        .iter()
        .filter(|&&l| l > CLIP_THRESHOLD)
        .count();
    let frame = spec.eigenvectors.columns(0, rank).into_owned();
    let projection = projection_from_orthonormal(&frame);
    Ok(ClippedProjection {
        projection,
        frame,
        rank,
        quality,
    })
}

#[derive(Debug, Clone)]
pub struct ClippedProjection {
    pub projection: HermitianMatrix,
    pub frame: DMatrix<f64>,
    pub rank: usize,
    pub quality: f64,
}

/// `V Vᵀ` for a matrix with orthonormal columns.
pub fn projection_from_orthonormal(frame: &DMatrix<f64>) -> HermitianMatrix {
    HermitianMatrix::from_symmetric_unchecked(frame * frame.transpose())
}

/// Orthonormal basis of the column span of `m` via thin QR. Columns whose
/// diagonal R entry falls below `tol · max|R_kk|` are treated as dependent
/// and reported through the returned rank.
pub fn orthonormal_basis(m: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    if m.ncols() == 0 {
        return (DMatrix::zeros(m.nrows(), 0), 0);
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let k = r.nrows().min(r.ncols());
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..k)
        .filter(|&i| r[(i, i)].abs() > tol * scale.max(f64::MIN_POSITIVE))
        .count();
    (q, rank)
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Hager's estimator of ‖M⁻¹‖₁ using the LU factors.
fn inverse_norm1_estimate(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
) -> f64 {
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        let new_est: f64 = y.iter().map(|v| v.abs()).sum();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = match lu_t.solve(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bj, bv), (j, v)| {
                if v.abs() > bv {
                    (j, v.abs())
                } else {
                    (bj, bv)
                }
            });
        if new_est <= est || zmax <= z.dot(&x) {
            est = est.max(new_est);
            break;
        }
        est = new_est;
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::dmatrix;

    #[test]
    fn identity_spectrum() {
        let s = eigendecompose(&HermitianMatrix::identity(3)).unwrap();
        assert_eq!(s.eigenvalues.len(), 3);
        for l in s.eigenvalues {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_spectrum_sorted_descending() {
        let s = eigendecompose(&HermitianMatrix::diagonal(&[0.0, 2.0])).unwrap();
        assert!((s.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!(s.eigenvalues[1].abs() < 1e-14);
        // eigenvector of 2 is e_2
        assert!((s.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_half_matrix() {
        let m = HermitianMatrix::new(dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap();
        let s = eigendecompose(&m).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!(s.eigenvalues[1].abs() < 1e-14);
        assert!(determinant(m.as_matrix()).abs() < 1e-15);
    }

    #[test]
    fn determinants() {
        assert_eq!(determinant(&DMatrix::identity(4, 4)), 1.0);
        let m = dmatrix![1.5, 0.5; 0.5, 1.5];
        assert!((determinant(&m) - 2.0).abs() < 1e-14);
        let (s, l) = log_determinant(&m);
        assert_eq!(s, 1.0);
        assert!((l - libm::log(2.0)).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            HermitianMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
        assert!(matches!(
            HermitianMatrix::new(dmatrix![1.0, 0.1; 0.0, 1.0]),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn solve_examples() {
        let b = dmatrix![3.0; -1.0];
        assert_eq!(solve(&DMatrix::identity(2, 2), &b, CONDITION_CAP).unwrap(), b);
        let x = solve(&dmatrix![2.0, 0.0; 0.0, 4.0], &dmatrix![2.0; 4.0], CONDITION_CAP).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        // 1 + (g-1)P with P = [[.5,.5],[.5,.5]], g = (2,1)
        let m = dmatrix![1.5, 0.5; 0.0, 1.0];
        let x = solve(&m, &dmatrix![1.0; 0.0], CONDITION_CAP).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn solve_reports_singularity() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        match solve(&m, &dmatrix![1.0; 0.0], CONDITION_CAP) {
            Err(Error::Singular {
                smallest_singular_value,
                ..
            }) => assert!(smallest_singular_value < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
        let m = dmatrix![1.0, 0.0; 0.0, 1e-14];
        assert!(matches!(
            solve(&m, &dmatrix![1.0; 0.0], CONDITION_CAP),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn clip_exact_projection_is_fixed_point() {
        let m = HermitianMatrix::new(dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap();
        let c = project_clip(&m, 1e-9).unwrap();
        assert_eq!(c.rank, 1);
        assert!(max_abs(&(c.projection.as_matrix() - m.as_matrix())) < 1e-12);
    }

    #[test]
    fn clip_rounds_spectrum() {
        let c = project_clip(&HermitianMatrix::diagonal(&[0.999, 0.001]), 0.01).unwrap();
        assert!(max_abs(&(c.projection.as_matrix() - dmatrix![1.0, 0.0; 0.0, 0.0])) < 1e-15);
        assert!((c.quality - 0.001).abs() < 1e-12);
        assert!(matches!(
            project_clip(&HermitianMatrix::diagonal(&[1.2, 0.0]), 0.01),
            Err(Error::DiscretizationQuality { .. })
        ));
    }
}
