use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian: max asymmetry {max_asymmetry:e}")]
    NotHermitian { max_asymmetry: f64 },
    #[error("eigendecomposition did not converge (off-diagonal residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("matrix is singular to tolerance: smallest singular value {smallest_singular_value:e}, condition estimate {condition:e}")]
    Singular {
        smallest_singular_value: f64,
        condition: f64,
    },
    #[error("discretization too coarse: eigenvalue {eigenvalue} outside [-{tol}, 1+{tol}]")]
    DiscretizationQuality { eigenvalue: f64, tol: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("near-diagonal evaluation at ({x}, {y}) needs derivatives of A and B or a diagonal rule")]
    MissingDerivative { x: f64, y: f64 },
    #[error("gauge matrix is not unimodular: det = {det}")]
    NotUnimodular { det: f64 },
    #[error("map is not injective near x = {x}")]
    NonInjective { x: f64 },
    #[error("map derivative must be positive, got {value} at x = {x}")]
    NonPositiveDerivative { x: f64, value: f64 },
    #[error("point {x} is not a node of the ground space")]
    NotANode { x: f64 },
    #[error("kernel diagonal Pi(q,q) = {value:e} at q = {point} is degenerate; conditioning on a particle there is impossible")]
    DegenerateDiagonal { point: f64, value: f64 },
    #[error("Pi(q,q) = {value} at q = {point}: the process has a particle there almost surely, so conditioning on a hole is impossible")]
    ConditioningImpossible { point: f64, value: f64 },
    #[error("the range contains a nonzero function supported on the conditioning points (smallest singular value {smallest_singular_value:e})")]
    SupportObstruction { smallest_singular_value: f64 },
    #[error("normalizing determinant vanishes at stage {stage}")]
    ZeroNormalizer { stage: usize },
    #[error("configuration is not in the required cylinder set: {0}")]
    NotInCylinder(String),
    #[error("enumeration size cap exceeded: n = {n}, subsets = {subsets}")]
    SizeCap { n: usize, subsets: u64 },
    #[error("conditioning event has zero probability")]
    ZeroProbability,
    #[error("operation requires a {expected} ground space")]
    KindMismatch { expected: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;
