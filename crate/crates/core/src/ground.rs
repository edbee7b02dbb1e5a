//! Phase spaces: finite point sets with counting measure and bounded
//! windows discretized by a quadrature rule.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    GaussLegendre,
    Trapezoid,
}

/// Points with attached measure weights. For a discrete space the weights
/// are all 1; for a continuous window they are quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSpace {
    pub kind: SpaceKind,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub window: Option<(f64, f64)>,
}

impl GroundSpace {
    /// Discrete space with counting measure.
    pub fn discrete(points: Vec<f64>) -> Result<Self> {
        check_increasing(&points)?;
        let weights = alloc::vec![1.0; points.len()];
        Ok(Self {
            kind: SpaceKind::Discrete,
            points,
            weights,
            window: None,
        })
    }

    /// Consecutive integers `from..=to`.
    pub fn integers(from: i64, to: i64) -> Result<Self> {
        if to < from {
            return Err(Error::Invalid(format!("empty integer range {from}..={to}")));
        }
        Self::discrete((from..=to).map(|k| k as f64).collect())
    }

    /// Quadrature discretization of the window `[a, b]` with `n` nodes.
    pub fn quadrature(a: f64, b: f64, n: usize, rule: QuadratureRule) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Invalid(format!("window [{a}, {b}] is not a proper interval")));
        }
        if n < 2 {
            return Err(Error::Invalid(format!("quadrature needs n >= 2 nodes, got {n}")));
        }
        let (points, weights) = match rule {
            QuadratureRule::Trapezoid => trapezoid(a, b, n),
            QuadratureRule::GaussLegendre => {
                let (x, w) = gauss_legendre(n);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                (
                    x.iter().map(|t| mid + half * t).collect(),
                    w.iter().map(|v| half * v).collect(),
                )
            }
        };
        Ok(Self {
            kind: SpaceKind::Continuous,
            points,
            weights,
            window: Some((a, b)),
        })
    }

    /// Rebuilds a space from serialized parts, validating invariants.
    pub fn from_parts(
        kind: SpaceKind,
        points: Vec<f64>,
        weights: Vec<f64>,
        window: Option<(f64, f64)>,
    ) -> Result<Self> {
        check_increasing(&points)?;
        if points.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Invalid(format!("weight {w} is not positive")));
        }
        if kind == SpaceKind::Continuous {
            let (a, b) = window.ok_or_else(|| Error::Invalid("continuous space needs a window".into()))?;
            if points.iter().any(|&x| x < a || x > b) {
                return Err(Error::Invalid("node outside the window".into()));
            }
        }
        Ok(Self {
            kind,
            points,
            weights,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == SpaceKind::Discrete
    }

    /// Index of the node exactly at `x` (within 1e-12 relative).
    pub fn node_index(&self, x: f64) -> Result<usize> {
        let tol = 1e-12 * x.abs().max(1.0);
        let i = self.nearest_index(x);
        if (self.points[i] - x).abs() <= tol {
            Ok(i)
        } else {
            Err(Error::NotANode { x })
        }
    }

    /// Nearest node, accepted when within half the local node spacing.
    pub fn snap(&self, x: f64) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::NotANode { x });
        }
        let i = self.nearest_index(x);
        let left = if i > 0 { self.points[i] - self.points[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < self.len() {
            self.points[i + 1] - self.points[i]
        } else {
            f64::INFINITY
        };
        let mut half = 0.5 * left.min(right);
        if !half.is_finite() {
            half = 0.5;
        }
        if (self.points[i] - x).abs() <= half {
            Ok(i)
        } else {
            Err(Error::NotANode { x })
        }
    }

    fn nearest_index(&self, x: f64) -> usize {
        match self.points.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.len() => self.len() - 1,
            Err(i) => {
                if (x - self.points[i - 1]) <= (self.points[i] - x) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Partial sum of `Σ 1/(1+x²)` over the points (finite for any finite set).
    pub fn nsq_partial_sum(&self) -> f64 {
        self.points.iter().map(|x| 1.0 / (1.0 + x * x)).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ w_i f(x_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Quadrature (or sum) of `Π(x,x)/(1+x²)` over the space.
pub fn check_xsq(diagonal: impl Fn(f64) -> f64, space: &GroundSpace) -> f64 {
    space.integrate(|x| diagonal(x) / (1.0 + x * x))
}

/// A finite configuration, stored as strictly increasing node indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Configuration(Vec<usize>);

impl Configuration {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Validates that indices are strictly increasing and inside the space.
    pub fn new(space: &GroundSpace, indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("configuration indices must be strictly increasing".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= space.len()) {
            return Err(Error::Invalid(format!(
                "index {i} outside a space of {} points",
                space.len()
            )));
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates-checks arbitrary indices.
    pub fn from_unsorted(space: &GroundSpace, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        Self::new(space, indices)
    }

    /// Snaps real positions to nodes (within half a node spacing).
    pub fn from_positions(space: &GroundSpace, xs: &[f64]) -> Result<Self> {
        let idx = xs.iter().map(|&x| space.snap(x)).collect::<Result<Vec<_>>>()?;
        Self::from_unsorted(space, idx)
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn positions(&self, space: &GroundSpace) -> Vec<f64> {
        self.0.iter().map(|&i| space.points[i]).collect()
    }

    /// Image under a bijection of node indices.
    pub fn map_nodes(&self, f: impl Fn(usize) -> usize) -> Self {
        let mut v: Vec<usize> = self.0.iter().map(|&i| f(i)).collect();
        v.sort_unstable();
        Self(v)
    }

    /// Removes the given nodes (those not present are ignored).
    pub fn without(&self, nodes: &[usize]) -> Self {
        Self(self.0.iter().copied().filter(|i| !nodes.contains(i)).collect())
    }

    /// Bitmask over node indices; valid when every index is below 64.
    pub fn mask(&self) -> u64 {
        self.0.iter().fold(0u64, |m, &i| m | (1u64 << i))
    }

    pub fn from_mask(mask: u64) -> Self {
        Self((0..64).filter(|i| mask & (1u64 << i) != 0).collect())
    }
}

fn check_increasing(points: &[f64]) -> Result<()> {
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("points must be finite".into()));
    }
    if let Some(w) = points.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(format!(
            "points must be strictly increasing (found {} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn trapezoid(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / (n - 1) as f64;
    let points = (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect();
    let weights = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect();
    (points, weights)
}

/// Gauss–Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let k = (i + 1) as f64;
        let nf = n as f64;
        let mut t = libm::cos(PI * (k - 0.25) / (nf + 0.5))
            * (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        dp = if d != 0.0 { d } else { dp };
        let weight = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_examples() {
        let s = GroundSpace::discrete(alloc::vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.is_discrete());
        assert!(GroundSpace::discrete(alloc::vec![0.0, 0.0, 1.0]).is_err());
        assert!(GroundSpace::discrete(alloc::vec![1.0, 0.0]).is_err());
        let half: Vec<f64> = (-3..3).map(|k| k as f64 + 0.5).collect();
        let g = GroundSpace::discrete(half).unwrap();
        assert_eq!(g.points[0], -2.5);
        assert_eq!(g.points[5], 2.5);
    }

    #[test]
    fn trapezoid_two_nodes() {
        let s = GroundSpace::quadrature(0.0, 1.0, 2, QuadratureRule::Trapezoid).unwrap();
        assert_eq!(s.points, alloc::vec![0.0, 1.0]);
        assert_eq!(s.weights, alloc::vec![0.5, 0.5]);
    }

    #[test]
    fn gauss_weights_sum_to_length() {
        for n in [2, 3, 7, 40] {
            let s = GroundSpace::quadrature(-1.0, 1.0, n, QuadratureRule::GaussLegendre).unwrap();
            assert!((s.total_weight() - 2.0).abs() < 1e-13, "n = {n}");
        }
        let s = GroundSpace::quadrature(0.0, 10.0, 200, QuadratureRule::GaussLegendre).unwrap();
        assert!((s.total_weight() - 10.0).abs() < 1e-10);
        assert!(s.points.windows(2).all(|w| w[0] < w[1]));
        assert!(s.points.iter().all(|&x| x > 0.0 && x < 10.0));
    }

    #[test]
    fn gauss_exact_for_polynomials() {
        let s = GroundSpace::quadrature(0.0, 2.0, 5, QuadratureRule::GaussLegendre).unwrap();
        // degree 9 is integrated exactly
        let v = s.integrate(|x| libm::pow(x, 9.0));
        assert!((v - 102.4).abs() < 1e-11);
    }

    #[test]
    fn refinement_improves_trapezoid() {
        let exact = 1.0 / 3.0;
        let mut prev = f64::INFINITY;
        for n in [3, 5, 9, 17, 33] {
            let s = GroundSpace::quadrature(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap();
            let err = (s.integrate(|x| x * x) - exact).abs();
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn xsq_examples() {
        let s = GroundSpace::quadrature(-1.0, 1.0, 40, QuadratureRule::GaussLegendre).unwrap();
        assert!((check_xsq(|_| 1.0, &s) - PI / 2.0).abs() < 1e-12);
        assert_eq!(check_xsq(|_| 0.0, &s), 0.0);
        let d = GroundSpace::integers(-2, 2).unwrap();
        assert!((check_xsq(|_| 0.5, &d) - 1.2).abs() < 1e-15);
        assert!((d.nsq_partial_sum() - 2.4).abs() < 1e-15);
    }

    #[test]
    fn configurations() {
        let s = GroundSpace::integers(0, 4).unwrap();
        assert!(Configuration::new(&s, alloc::vec![1, 1]).is_err());
        assert!(Configuration::new(&s, alloc::vec![5]).is_err());
        let c = Configuration::from_positions(&s, &[3.2, 0.9]).unwrap();
        assert_eq!(c.indices(), &[1, 3]);
        assert_eq!(Configuration::from_mask(c.mask()), c);
        assert!(s.node_index(2.5).is_err());
    }
}
