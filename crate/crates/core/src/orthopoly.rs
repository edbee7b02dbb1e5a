//! Orthonormal polynomials of a finite discrete measure via the
//! Stieltjes (Lanczos) recurrence.
//!
//! `x p_k = a_{k+1} p_{k+1} + b_k p_k + a_k p_{k-1}`, `p_0 = 1/sqrt(mass)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Recurrence {
    /// `b_0 .. b_{d-1}`
    pub b: Vec<f64>,
    /// `a_1 .. a_d` stored at indices `0 .. d-1`
    pub a: Vec<f64>,
    pub p0: f64,
}

impl Recurrence {
    /// Coefficients up to degree `degree` for the measure `Σ m_i δ_{x_i}`.
    /// Needs `degree < points.len()`.
    pub fn stieltjes(points: &[f64], masses: &[f64], degree: usize) -> Result<Self> {
        let n = points.len();
        if masses.len() != n {
            return Err(Error::Invalid("points and masses differ in length".into()));
        }
        if degree >= n {
            return Err(Error::Invalid(format!(
                "degree {degree} needs more than {n} support points"
            )));
        }
        if masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Invalid("masses must be positive".into()));
        }
        let total: f64 = masses.iter().sum();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
        basis.push(masses.iter().map(|m| libm::sqrt(m / total)).collect());
        let mut a = Vec::with_capacity(degree);
        let mut b = Vec::with_capacity(degree);
        for k in 0..degree {
            let vk = &basis[k];
            let bk: f64 = (0..n).map(|i| points[i] * vk[i] * vk[i]).sum();
            let mut w: Vec<f64> = (0..n).map(|i| (points[i] - bk) * vk[i]).collect();
            if k > 0 {
                let ak = a[k - 1];
                let prev = &basis[k - 1];
                for i in 0..n {
                    w[i] -= ak * prev[i];
                }
            }
            // two passes of full reorthogonalization
            for _ in 0..2 {
                for v in &basis {
                    let c: f64 = (0..n).map(|i| w[i] * v[i]).sum();
                    for i in 0..n {
                        w[i] -= c * v[i];
                    }
                }
            }
            let norm = libm::sqrt(w.iter().map(|v| v * v).sum::<f64>());
            if !(norm > 1e-300) {
                return Err(Error::Invalid(format!("recurrence breaks down at degree {}", k + 1)));
            }
            for v in &mut w {
                *v /= norm;
            }
            b.push(bk);
            a.push(norm);
            basis.push(w);
        }
        Ok(Self {
            b,
            a,
            p0: 1.0 / libm::sqrt(total),
        })
    }

    pub fn degree(&self) -> usize {
        self.a.len()
    }

    /// `a_k` for `1 <= k <= degree`.
    pub fn a(&self, k: usize) -> f64 {
        self.a[k - 1]
    }

    /// Values `p_0(x) .. p_d(x)`.
    pub fn values(&self, x: f64) -> Vec<f64> {
        self.values_and_derivatives(x).0
    }

    /// Values and first derivatives of `p_0 .. p_d` at `x`.
    pub fn values_and_derivatives(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let d = self.degree();
        let mut p = vec![0.0; d + 1];
        let mut dp = vec![0.0; d + 1];
        p[0] = self.p0;
        for k in 0..d {
            let prev = if k > 0 { self.a[k - 1] * p[k - 1] } else { 0.0 };
            let dprev = if k > 0 { self.a[k - 1] * dp[k - 1] } else { 0.0 };
            p[k + 1] = ((x - self.b[k]) * p[k] - prev) / self.a[k];
            dp[k + 1] = ((x - self.b[k]) * dp[k] + p[k] - dprev) / self.a[k];
        }
        (p, dp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::gauss_legendre;

    #[test]
    fn legendre_from_gauss_nodes() {
        let (x, w) = gauss_legendre(12);
        let rec = Recurrence::stieltjes(&x, &w, 5).unwrap();
        // orthonormal Legendre: a_k = k / sqrt(4k^2 - 1), b_k = 0
        for k in 1..=5 {
            let kf = k as f64;
            assert!((rec.a(k) - kf / libm::sqrt(4.0 * kf * kf - 1.0)).abs() < 1e-13);
        }
        assert!(rec.b.iter().all(|b| b.abs() < 1e-13));
        let p = rec.values(0.3);
        // p_2 = sqrt(5/2) (3x^2 - 1)/2
        assert!((p[2] - libm::sqrt(2.5) * (3.0 * 0.09 - 1.0) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn derivatives_match_differences() {
        let pts: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let m: Vec<f64> = (0..9).map(|i| 1.0 + 0.1 * i as f64).collect();
        let rec = Recurrence::stieltjes(&pts, &m, 4).unwrap();
        let h = 1e-6;
        let (_, dp) = rec.values_and_derivatives(0.4);
        let up = rec.values(0.4 + h);
        let dn = rec.values(0.4 - h);
        for k in 0..=4 {
            assert!((dp[k] - (up[k] - dn[k]) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn degree_limited_by_support() {
        assert!(Recurrence::stieltjes(&[0.0, 1.0], &[1.0, 1.0], 2).is_err());
        assert!(Recurrence::stieltjes(&[0.0, 1.0], &[1.0, 1.0], 1).is_ok());
    }
}
