//! The five verbs. Each returns an [`Outcome`]: the files to write, a JSON
//! summary and whether every check passed. Nothing touches the disk until
//! [`Outcome::commit`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use dpp_core::functionals::{self, DiffeoContext, RNReport, Stage};
use dpp_core::ground::Configuration;
use dpp_core::kernels::{Diffeo, Kernel, NystromKernel, ProjectionMatrix};
use dpp_core::oracle::{self, McReport};
use dpp_core::palm::{self, Condition, Fault, UpdatedKernel};
use dpp_core::sampler::SamplerState;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Action, Config, FunctionalKind, Model};
use crate::error::{Error, Result};
use crate::verify::{self, Suite};
use crate::{io, mc};

/// Agreement bound between integrable forms and direct updates.
pub const FORM_TOL: f64 = 1e-10;
/// Monte Carlo comparisons in reports use this many standard errors.
pub const MC_SIGMAS: f64 = 3.0;
/// At most this many node pairs enter the form agreement report.
pub const FORM_PAIRS: usize = 400;

pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    pub pass: bool,
}

impl Outcome {
    /// Writes every file into `dir`, each one atomically.
    pub fn commit(&self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            io::write_atomic(&dir.join(name), bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: Option<u64>,
    pub stages: Option<usize>,
    pub fault: Fault,
    /// Directory that relative paths in the config resolve against.
    pub base: PathBuf,
}

fn seed(cfg: &Config, opts: &Options) -> u64 {
    opts.seed.unwrap_or(cfg.seed)
}

fn json_file(name: &str, v: &impl Serialize) -> (String, Vec<u8>) {
    (name.to_string(), io::to_json(v).into_bytes())
}

pub fn sample(cfg: &Config, opts: &Options) -> Result<Outcome> {
    let model = cfg.build(&opts.base)?;
    let state = SamplerState::new(seed(cfg, opts), cfg.stream);
    let draws = mc::draws(&model.p, cfg.count, &state);
    let n = model.p.n();
    let mut hits = vec![0usize; n];
    for x in &draws {
        for &i in x.indices() {
            hits[i] += 1;
        }
    }
    let denom = cfg.count.max(1) as f64;
    let intensities: Vec<Value> = (0..n)
        .map(|i| {
            json!({
                "node": i,
                "x": model.space.points[i],
                "empirical": hits[i] as f64 / denom,
                "diagonal": model.p.get(i, i),
            })
        })
        .collect();
    let mean_count = draws.iter().map(|x| x.len()).sum::<usize>() as f64 / denom;
    let summary = json!({
        "kernel": kernel_name(&model, cfg),
        "n": n,
        "rank": model.p.rank,
        "count": cfg.count,
        "seed": state.seed,
        "stream": state.stream_id,
        "mean_count": mean_count,
        "expected_count": model.p.trace(),
        "intensities": intensities,
    });
    Ok(Outcome {
        files: vec![
            ("draws.csv".into(), io::draws_csv(&draws).into_bytes()),
            json_file("summary.json", &summary),
        ],
        summary,
        pass: true,
    })
}

fn kernel_name(model: &Model, cfg: &Config) -> String {
    match &model.integrable {
        Some(k) => k.name().to_string(),
        None => format!("{:?}", cfg.kernel),
    }
}

/// Node pairs for the agreement report: all of them on small spaces,
/// otherwise an even subsample.
fn node_pairs(model: &Model) -> Vec<(f64, f64)> {
    let pts = &model.space.points;
    let n = pts.len();
    let all = n * n;
    let step = all.div_ceil(FORM_PAIRS).max(1);
    (0..all).step_by(step).map(|k| (pts[k / n], pts[k % n])).collect()
}

pub fn palm(cfg: &Config, opts: &Options) -> Result<Outcome> {
    let model = cfg.build(&opts.base)?;
    let particles = model.snap(&cfg.particles)?;
    let holes = model.snap(&cfg.holes)?;
    let steps: Vec<Condition> = particles
        .iter()
        .map(|&i| Condition::Particle(i))
        .chain(holes.iter().map(|&i| Condition::Hole(i)))
        .collect();
    let conditioned = palm::condition_sequence_with(&model.p, &steps, opts.fault)?;

    let mut agreement = Value::Null;
    let mut pass = true;
    if let (Some(k), false) = (&model.integrable, steps.is_empty()) {
        let pts = &model.space.points;
        let mut form = k.clone();
        let mut direct: Arc<dyn Kernel> = Arc::new(k.clone());
        for s in &steps {
            let q = pts[s.node()];
            match s {
                Condition::Particle(_) => {
                    form = palm::palm_integrable_form(&form, q)?;
                    direct = Arc::new(UpdatedKernel::particle(direct, q)?);
                }
                Condition::Hole(_) => {
                    form = palm::hole_integrable_form(&form, q)?;
                    direct = Arc::new(UpdatedKernel::hole(direct, q)?);
                }
            }
        }
        let pairs = node_pairs(&model);
        let value = palm::form_agreement(&form, direct.as_ref(), &pairs)?;
        pass = value <= FORM_TOL;
        agreement = json!({ "value": value, "tolerance": FORM_TOL, "pairs": pairs.len(), "pass": pass });
    }
    let pts = &model.space.points;
    let summary = json!({
        "kernel": kernel_name(&model, cfg),
        "particles": particles.iter().map(|&i| pts[i]).collect::<Vec<_>>(),
        "holes": holes.iter().map(|&i| pts[i]).collect::<Vec<_>>(),
        "rank_before": model.p.rank,
        "rank_after": conditioned.rank,
        "integrable_agreement": agreement,
    });
    Ok(Outcome {
        files: vec![
            ("conditioned.bin".into(), io::matrix_bytes(&conditioned)),
            json_file("palm_report.json", &summary),
        ],
        summary,
        pass,
    })
}

fn stages(cfg: &Config, opts: &Options, model: &Model) -> Vec<Stage> {
    match (&cfg.stages, opts.stages) {
        (Some(s), None) => s.stages(),
        (Some(s), Some(k)) => {
            let mut s = s.clone();
            s.count = k;
            s.stages()
        }
        (None, Some(k)) if k > 0 => {
            let reach = model.space.points.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let radii: Vec<f64> = (0..k).map(|j| reach / 2f64.powi((k - 1 - j) as i32)).collect();
            Stage::radii(&radii)
        }
        _ => Vec::new(),
    }
}

fn configurations(cfg: &Config, opts: &Options, model: &Model) -> Result<(Vec<Configuration>, bool)> {
    match &cfg.configurations {
        Some(list) => Ok((list.iter().map(|xs| model.configuration(xs)).collect::<Result<_>>()?, false)),
        None => {
            let state = SamplerState::new(seed(cfg, opts), cfg.stream);
            Ok((mc::draws(&model.p, cfg.count, &state), true))
        }
    }
}

/// Caches the per-`X ∩ V` part of the diffeomorphism formula.
pub struct DiffeoCache<'a> {
    p: &'a ProjectionMatrix,
    kernel: &'a dyn Kernel,
    map: &'a Diffeo,
    stages: Vec<Stage>,
    cache: Mutex<HashMap<Vec<usize>, Arc<DiffeoContext>>>,
}

impl<'a> DiffeoCache<'a> {
    pub fn new(p: &'a ProjectionMatrix, kernel: &'a dyn Kernel, map: &'a Diffeo, stages: Vec<Stage>) -> Self {
        Self {
            p,
            kernel,
            map,
            stages,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn report(&self, x: &Configuration) -> Result<RNReport> {
        let nodes = functionals::nodes_in_support(self.p, self.map, x);
        let cached = self.cache.lock().expect("cache lock").get(&nodes).cloned();
        let ctx = match cached {
            Some(c) => c,
            None => {
                let c = Arc::new(DiffeoContext::new(self.p, self.kernel, self.map, &nodes, &self.stages)?);
                self.cache.lock().expect("cache lock").insert(nodes, c.clone());
                c
            }
        };
        Ok(ctx.report(x)?)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Serialize)]
struct RnRow<'a> {
    configuration: &'a [usize],
    report: RNReport,
}

pub fn rn(cfg: &Config, opts: &Options) -> Result<Outcome> {
    let model = cfg.build(&opts.base)?;
    let action = cfg
        .action
        .as_ref()
        .ok_or_else(|| Error::Usage("rn needs an \"action\"".into()))?
        .resolve(&model)?;
    let stages = stages(cfg, opts, &model);
    let (xs, sampled) = configurations(cfg, opts, &model)?;
    let reports: Vec<RNReport> = match &action {
        Action::Identity => xs.iter().map(|_| RNReport::unit()).collect(),
        Action::Permutation { points, sigma } => mc::thread_pool().install(|| {
            use rayon::prelude::*;
            xs.par_iter()
                .map(|x| Ok(functionals::rn_relabel_with(&model.p, points, sigma, x, &stages, opts.fault)?))
                .collect::<Result<Vec<_>>>()
        })?,
        Action::Diffeo(map) => {
            let k = model
                .kernel()
                .ok_or_else(|| Error::Usage("diffeomorphism actions need an analytic kernel".into()))?;
            let window = model.space.window.ok_or(dpp_core::Error::KindMismatch { expected: "continuous" })?;
            map.validate(window, 4096)?;
            let ext = NystromKernel::new(k, &model.p)?;
            let cache = DiffeoCache::new(&model.p, &ext, map, stages.clone());
            mc::thread_pool().install(|| {
                use rayon::prelude::*;
                xs.par_iter().map(|x| cache.report(x)).collect::<Result<Vec<_>>>()
            })?
        }
    };
    let values: Vec<f64> = reports.iter().map(|r| r.value).collect();
    let psis: Vec<f64> = reports.iter().map(|r| r.psi_bar).collect();
    let batch = (sampled && xs.len() >= 2).then(|| {
        (
            oracle::mc_compare(&values, 1.0, MC_SIGMAS),
            oracle::mc_compare(&psis, 1.0, MC_SIGMAS),
        )
    });
    let pass = batch.map(|(v, _)| v.pass).unwrap_or(true);
    let rows: Vec<RnRow> = xs
        .iter()
        .zip(reports)
        .map(|(x, report)| RnRow {
            configuration: x.indices(),
            report,
        })
        .collect();
    let summary = json!({
        "kernel": kernel_name(&model, cfg),
        "count": rows.len(),
        "stages": stages,
        "expectation_one": batch.map(|(v, _)| v),
        "psi_bar_mean": batch.map(|(_, p)| p),
    });
    let full = json!({ "summary": summary, "reports": rows });
    Ok(Outcome {
        files: vec![json_file("rn.json", &full)],
        summary,
        pass,
    })
}

pub fn functional(cfg: &Config, opts: &Options) -> Result<Outcome> {
    let model = cfg.build(&opts.base)?;
    let fc = cfg
        .functional
        .as_ref()
        .ok_or_else(|| Error::Usage("functional needs a \"functional\" block".into()))?;
    let spec = fc.f.to_spec();
    let values = spec.node_values(&model.space)?;
    let state = SamplerState::new(seed(cfg, opts), cfg.stream);
    let (summary, pass) = match fc.kind {
        FunctionalKind::Additive => {
            let mean = functionals::additive_expectation(&spec, &model.p)?;
            let var = functionals::additive_variance(&spec, &model.p)?;
            let (mc_mean, mc_var) = if cfg.count >= 2 {
                let s = mc::map_draws(&model.p, cfg.count, &state, |_, x| {
                    x.indices().iter().map(|&i| values[i]).sum::<f64>()
                });
                (
                    Some(oracle::mc_compare(&s, mean, MC_SIGMAS)),
                    Some(oracle::mc_compare_variance(&s, var, MC_SIGMAS)),
                )
            } else {
                (None, None)
            };
            let pass = mc_mean.is_none_or(|m| m.pass) && mc_var.is_none_or(|m| m.pass);
            (
                json!({ "kind": "additive", "expectation": mean, "variance": var,
                        "mc_mean": mc_mean, "mc_variance": mc_var }),
                pass,
            )
        }
        FunctionalKind::Multiplicative => {
            let e = functionals::multiplicative_expectation(&spec, &model.p)?;
            let bound = functionals::diagonal_bound_check(&spec, &model.p).ok();
            let transformed_rank = functionals::transformed_kernel(&spec, &model.p).ok().map(|t| t.rank);
            let mc: Option<McReport> = (cfg.count >= 2).then(|| {
                let s = mc::map_draws(&model.p, cfg.count, &state, |_, x| {
                    x.indices().iter().map(|&i| values[i]).product::<f64>()
                });
                oracle::mc_compare(&s, e, MC_SIGMAS)
            });
            (
                json!({ "kind": "multiplicative", "expectation": e,
                        "transformed_rank": transformed_rank,
                        "diagonal_bound_violation": bound.map(|b| b.max_violation),
                        "mc_mean": mc }),
                mc.is_none_or(|m| m.pass),
            )
        }
    };
    Ok(Outcome {
        files: vec![json_file("functional.json", &summary)],
        summary,
        pass,
    })
}

pub fn verify(suite: Suite, seed: u64, fault: Fault) -> Result<Outcome> {
    let reports = verify::run(suite, seed, fault)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    let summary = json!({
        "suite": suite,
        "seed": seed,
        "fault": matches!(fault, Fault::PalmSignFlip),
        "checks": reports.len(),
        "failed": failed,
    });
    let full = json!({ "summary": summary, "reports": reports });
    let name = format!("verify_{}.json", serde_json::to_value(suite).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
    Ok(Outcome {
        files: vec![json_file(&name, &full)],
        summary,
        pass: failed == 0,
    })
}
