//! Run configuration: one JSON document per run.
//!
//! ```json
//! {
//!   "ground": {"type": "integers", "from": -20, "to": 20},
//!   "kernel": {"type": "discrete_sine", "theta": 0.5},
//!   "count": 1000,
//!   "seed": 7
//! }
//! ```
//!
//! Positions (`particles`, `holes`, configurations, action points) are
//! given as coordinates and snapped to the nearest node.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dpp_core::functionals::{FunctionalSpec, Stage};
use dpp_core::ground::{Configuration, GroundSpace, QuadratureRule, SpaceKind};
use dpp_core::kernels::{self, Diffeo, IntegrableKernel, Kernel, ProjectionMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_CLIP_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub ground: GroundConfig,
    pub kernel: KernelConfig,
    /// Allowed eigenvalue excursion outside `[0, 1]` before rounding.
    #[serde(default = "default_clip_tol")]
    pub clip_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub particles: Vec<f64>,
    #[serde(default)]
    pub holes: Vec<f64>,
    #[serde(default)]
    pub action: Option<ActionConfig>,
    /// Explicit configurations as coordinate lists; sampled when absent.
    #[serde(default)]
    pub configurations: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub functional: Option<FunctionalConfig>,
    #[serde(default)]
    pub stages: Option<StagesConfig>,
}

fn default_clip_tol() -> f64 {
    DEFAULT_CLIP_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundConfig {
    Integers { from: i64, to: i64 },
    Quadrature { a: f64, b: f64, n: usize, rule: QuadratureRule },
    Points { points: Vec<f64> },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Sine,
    DiscreteSine {
        theta: f64,
    },
    /// Legendre ensemble on the ground window.
    Legendre {
        rank: usize,
    },
    /// Discrete orthogonal-polynomial ensemble on the ground points.
    OpEnsemble {
        rank: usize,
        #[serde(default)]
        masses: Option<Vec<f64>>,
    },
    /// `x,A,B[,dA,dB]` CSV table, interpolated between rows.
    Table {
        path: PathBuf,
    },
    /// Stored projection matrix; its ground space must match.
    Matrix {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionConfig {
    Identity,
    Transposition { p: f64, q: f64 },
    /// `points[i] ↦ points[sigma[i]]`.
    Permutation { points: Vec<f64>, sigma: Vec<usize> },
    Bump { center: f64, radius: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub kind: FunctionalKind,
    pub f: FunctionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionConfig {
    Constant {
        value: f64,
    },
    /// One value per node.
    Table {
        values: Vec<f64>,
    },
    /// `base + height · exp(-((x - center)/width)²)`.
    Gaussian {
        center: f64,
        width: f64,
        height: f64,
        #[serde(default)]
        base: f64,
    },
    /// `inside` on `[a, b]`, `outside` elsewhere.
    Indicator {
        a: f64,
        b: f64,
        #[serde(default = "one")]
        inside: f64,
        #[serde(default)]
        outside: f64,
    },
    /// `amplitude · cos(frequency · x)`.
    Cosine {
        frequency: f64,
        amplitude: f64,
    },
    /// `1/x` away from 0, `0` at 0.
    Reciprocal,
}

fn one() -> f64 {
    1.0
}

impl FunctionConfig {
    pub fn to_spec(&self) -> FunctionalSpec {
        match *self {
            FunctionConfig::Constant { value } => FunctionalSpec::constant(value),
            FunctionConfig::Table { ref values } => FunctionalSpec::table(values.clone()),
            FunctionConfig::Gaussian {
                center,
                width,
                height,
                base,
            } => FunctionalSpec::function(kernels::scalar_fn(move |x| {
                let t = (x - center) / width;
                base + height * (-t * t).exp()
            })),
            FunctionConfig::Indicator { a, b, inside, outside } => {
                FunctionalSpec::function(kernels::scalar_fn(move |x| if x >= a && x <= b { inside } else { outside }))
            }
            FunctionConfig::Cosine { frequency, amplitude } => {
                FunctionalSpec::function(kernels::scalar_fn(move |x| amplitude * (frequency * x).cos()))
            }
            FunctionConfig::Reciprocal => {
                FunctionalSpec::function(kernels::scalar_fn(|x| if x == 0.0 { 0.0 } else { 1.0 / x }))
            }
        }
    }
}

/// Either `R_k = r0 · 2^k`, `ε_k = eps0 · 2^{-k}` for `k < count`, or
/// radii only when `eps0` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagesConfig {
    pub r0: f64,
    #[serde(default)]
    pub eps0: Option<f64>,
    pub count: usize,
}

impl StagesConfig {
    pub fn stages(&self) -> Vec<Stage> {
        match self.eps0 {
            Some(e) => Stage::schedule(self.r0, e, self.count),
            None => {
                let radii: Vec<f64> = (0..self.count).map(|k| self.r0 * 2f64.powi(k as i32)).collect();
                Stage::radii(&radii)
            }
        }
    }
}

impl Config {
    pub fn from_str_at(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        Self::from_str_at(&text, path)
    }

    /// Builds the ground space, the kernel and its projection matrix;
    /// relative paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Model> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let space = match &self.ground {
            GroundConfig::Integers { from, to } => GroundSpace::integers(*from, *to)?,
            GroundConfig::Quadrature { a, b, n, rule } => GroundSpace::quadrature(*a, *b, *n, *rule)?,
            GroundConfig::Points { points } => GroundSpace::discrete(points.clone())?,
            GroundConfig::File { path } => io::read_ground(&resolve(path))?,
        };
        let integrable: Option<IntegrableKernel> = match &self.kernel {
            KernelConfig::Sine => Some(kernels::sine()),
            KernelConfig::DiscreteSine { theta } => Some(kernels::discrete_sine(*theta)?),
            KernelConfig::Legendre { rank } => {
                let (a, b) = space
                    .window
                    .ok_or_else(|| Error::Usage("legendre kernel needs a continuous ground space".into()))?;
                Some(kernels::legendre_ensemble(a, b, *rank)?)
            }
            KernelConfig::OpEnsemble { rank, masses } => {
                let m = masses.clone().unwrap_or_else(|| vec![1.0; space.len()]);
                Some(kernels::discrete_op_ensemble(&space.points, &m, *rank)?)
            }
            KernelConfig::Table { path } => {
                let t = io::read_kernel_table(&resolve(path))?;
                Some(kernels::custom_table(space.kind, t.x, t.a, t.b, t.derivatives, None)?)
            }
            KernelConfig::Matrix { .. } => None,
        };
        let p = match (&self.kernel, &integrable) {
            (KernelConfig::Matrix { path }, _) => {
                let p = io::read_matrix(&resolve(path))?;
                if p.space != space {
                    return Err(Error::Usage("stored matrix has a different ground space".into()));
                }
                p
            }
            (_, Some(k)) => kernels::discretize(k, &space, self.clip_tol)?,
            (_, None) => unreachable!("every non-matrix kernel is integrable"),
        };
        Ok(Model { space, integrable, p })
    }
}

pub struct Model {
    pub space: GroundSpace,
    pub integrable: Option<IntegrableKernel>,
    pub p: ProjectionMatrix,
}

impl Model {
    pub fn kernel(&self) -> Option<Arc<dyn Kernel>> {
        self.integrable.clone().map(|k| Arc::new(k) as Arc<dyn Kernel>)
    }

    pub fn snap(&self, xs: &[f64]) -> Result<Vec<usize>> {
        Ok(xs.iter().map(|&x| self.space.snap(x)).collect::<dpp_core::Result<Vec<_>>>()?)
    }

    pub fn configuration(&self, xs: &[f64]) -> Result<Configuration> {
        Ok(Configuration::from_positions(&self.space, xs)?)
    }

    pub fn is_discrete(&self) -> bool {
        self.space.kind == SpaceKind::Discrete
    }
}

/// Resolved action.
pub enum Action {
    Identity,
    Permutation { points: Vec<usize>, sigma: Vec<usize> },
    Diffeo(Diffeo),
}

impl ActionConfig {
    pub fn resolve(&self, model: &Model) -> Result<Action> {
        Ok(match self {
            ActionConfig::Identity => Action::Identity,
            ActionConfig::Transposition { p, q } => Action::Permutation {
                points: model.snap(&[*p, *q])?,
                sigma: vec![1, 0],
            },
            ActionConfig::Permutation { points, sigma } => Action::Permutation {
                points: model.snap(points)?,
                sigma: sigma.clone(),
            },
            ActionConfig::Bump { center, radius, delta } => Action::Diffeo(Diffeo::bump(*center, *radius, *delta)),
        })
    }
}
