//! Verification suites over fixed-seed random instances.

use dpp_core::ground::GroundSpace;
use dpp_core::kernels::{self, ProjectionMatrix};
use dpp_core::linalg::HermitianMatrix;
use dpp_core::oracle::{self, Report};
use dpp_core::palm::Fault;
use dpp_core::sampler::{uniform, SamplerState};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mc;

pub const INSTANCES: usize = 50;
pub const RN_INSTANCES: usize = 20;
pub const SAMPLER_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Palm,
    Hole,
    Mult,
    Rn,
    Sampler,
    All,
}

/// Random frame projections with `5 <= n <= 8`, `1 <= r <= 4`.
pub fn frame_instances(seed: u64, count: usize) -> Result<Vec<(String, ProjectionMatrix)>> {
    (0..count)
        .map(|k| {
            let n = 5 + k % 4;
            let r = 1 + (k / 4) % 4;
            let p = oracle::random_frame_projection(n, r, &SamplerState::new(seed, k as u64))?;
            Ok((oracle::label("frame", n, r, seed, k), p))
        })
        .collect()
}

fn fixed(diag: &[f64]) -> ProjectionMatrix {
    let sp = GroundSpace::integers(1, diag.len() as i64).expect("valid range");
    ProjectionMatrix::from_matrix(sp, &HermitianMatrix::diagonal(diag), 1e-9).expect("diagonal projection")
}

pub fn palm_suite(seed: u64, fault: Fault) -> Result<Vec<Report>> {
    let mut out = Vec::new();
    for (label, p) in frame_instances(seed, INSTANCES)? {
        for q in 0..p.n() {
            out.push(oracle::check_palm(&p, q, &format!("{label} q={q}"), fault));
        }
    }
    let d = fixed(&[0.0, 1.0]);
    out.push(oracle::check_palm(&d, 0, "diag(0,1) q=0", fault));
    Ok(out)
}

pub fn hole_suite(seed: u64) -> Result<Vec<Report>> {
    let mut out = Vec::new();
    for (label, p) in frame_instances(seed, INSTANCES)? {
        for q in 0..p.n() {
            out.push(oracle::check_hole(&p, q, &format!("{label} q={q}")));
        }
    }
    let d = fixed(&[0.0, 1.0]);
    out.push(oracle::check_hole(&d, 0, "diag(0,1) q=0"));
    out.push(oracle::check_hole(&d, 1, "diag(0,1) q=1"));
    Ok(out)
}

/// `g` uniform on `[0.2, 5]`; every fifth instance has a zero coordinate
/// and every tenth a second one.
pub fn mult_values(n: usize, k: usize, state: &SamplerState) -> Vec<f64> {
    let mut rng = state.rng();
    let mut g: Vec<f64> = (0..n).map(|_| 0.2 + 4.8 * uniform(&mut rng)).collect();
    if k.is_multiple_of(5) {
        g[0] = 0.0;
    }
    if k.is_multiple_of(10) {
        g[n - 1] = 0.0;
    }
    g
}

pub fn mult_suite(seed: u64) -> Result<Vec<Report>> {
    let mut out = Vec::new();
    for (k, (label, p)) in frame_instances(seed, INSTANCES)?.into_iter().enumerate() {
        let g = mult_values(p.n(), k, &SamplerState::new(seed, 10_000 + k as u64));
        out.extend(oracle::check_mult(&p, &g, &label));
    }
    Ok(out)
}

/// A random permutation instance: an orthogonal-polynomial ensemble on
/// `6..=8` points, `l ∈ {2, 3}` moved points and a non-identity `σ`.
pub struct RnInstance {
    pub label: String,
    pub p: ProjectionMatrix,
    pub points: Vec<usize>,
    pub sigma: Vec<usize>,
}

pub fn rn_instances(seed: u64, count: usize) -> Result<Vec<RnInstance>> {
    (0..count)
        .map(|k| {
            let n = 6 + k % 3;
            let l = 2 + k % 2;
            let r = (1 + k % 4).min(n - l);
            let state = SamplerState::new(seed, 20_000 + k as u64);
            let (p, _) = oracle::random_op_ensemble(n, r, &state)?;
            let mut rng = state.at(1).rng();
            let mut nodes: Vec<usize> = (0..n).collect();
            shuffle(&mut nodes, &mut rng);
            let points = nodes[..l].to_vec();
            let mut sigma: Vec<usize> = (0..l).collect();
            while sigma.iter().enumerate().all(|(i, &s)| i == s) {
                shuffle(&mut sigma, &mut rng);
            }
            Ok(RnInstance {
                label: format!("{} points={points:?} sigma={sigma:?}", oracle::label("op", n, r, seed, k)),
                p,
                points,
                sigma,
            })
        })
        .collect()
}

fn shuffle(v: &mut [usize], rng: &mut impl RngCore) {
    for i in (1..v.len()).rev() {
        let j = ((uniform(rng) * (i + 1) as f64) as usize).min(i);
        v.swap(i, j);
    }
}

pub fn rn_suite(seed: u64, fault: Fault) -> Result<Vec<Report>> {
    let mut out = Vec::new();
    for inst in rn_instances(seed, RN_INSTANCES)? {
        let c = oracle::check_rn(&inst.p, &inst.points, &inst.sigma, &inst.label, fault);
        out.push(c.report);
        out.push(Report {
            check: "rn".into(),
            instance: inst.label,
            metric: format!("trivial_cases_not_exactly_one (of {})", c.trivial_cases),
            value: if c.trivial_exact { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass: c.trivial_exact,
        });
    }
    Ok(out)
}

/// The three sampler test kernels: a random frame, a discrete sine window
/// and an orthogonal-polynomial ensemble.
pub fn sampler_kernels(seed: u64) -> Result<Vec<(String, ProjectionMatrix)>> {
    let frame = oracle::random_frame_projection(8, 3, &SamplerState::new(seed, 30_000))?;
    let sp = GroundSpace::integers(-6, 6)?;
    let dsine = kernels::discretize(&kernels::discrete_sine(0.5)?, &sp, 1e-2)?;
    let (op, _) = oracle::random_op_ensemble(12, 4, &SamplerState::new(seed, 30_001))?;
    Ok(vec![
        ("frame(n=8,r=3)".into(), frame),
        ("discrete_sine(0.5) on -6..6".into(), dsine),
        ("op(n=12,r=4)".into(), op),
    ])
}

pub fn sampler_suite(seed: u64) -> Result<Vec<Report>> {
    let mut out = Vec::new();
    for (k, (label, p)) in sampler_kernels(seed)?.into_iter().enumerate() {
        let draws = mc::draws(&p, SAMPLER_DRAWS, &SamplerState::new(seed, 40_000 + k as u64));
        out.extend(oracle::check_sampler(&p, &draws, &label));
    }
    Ok(out)
}

pub fn run(suite: Suite, seed: u64, fault: Fault) -> Result<Vec<Report>> {
    Ok(match suite {
        Suite::Palm => palm_suite(seed, fault)?,
        Suite::Hole => hole_suite(seed)?,
        Suite::Mult => mult_suite(seed)?,
        Suite::Rn => rn_suite(seed, fault)?,
        Suite::Sampler => sampler_suite(seed)?,
        Suite::All => {
            let mut v = palm_suite(seed, fault)?;
            v.extend(hole_suite(seed)?);
            v.extend(mult_suite(seed)?);
            v.extend(rn_suite(seed, fault)?);
            v.extend(sampler_suite(seed)?);
            v
        }
    })
}
