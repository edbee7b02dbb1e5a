//! Acceptance criteria 1-12. Each test writes one `criterion N: PASS|FAIL`
//! line to stderr (uncaptured) and then asserts.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use dpp::commands::DiffeoCache;
use dpp::{mc, verify};
use dpp_core::functionals::{self, FunctionalSpec, RNReport, Stage};
use dpp_core::ground::{Configuration, GroundSpace, QuadratureRule};
use dpp_core::kernels::{self, bump_profile, Diffeo, NystromKernel, ProjectionMatrix};
use dpp_core::oracle::{self, Report};
use dpp_core::palm::{self, Fault, UpdatedKernel};
use dpp_core::sampler::{uniform, SamplerState};

const SEED: u64 = 7;

const ENUM_SUM_TOL: f64 = 1e-10;
const ENUM_RUNTIME: Duration = Duration::from_secs(10);
const PALM_RUNTIME: Duration = Duration::from_secs(30);
const FORM_TOL: f64 = 1e-10;
const FORM_PAIRS: usize = 200;
const DISCRETE_RELATION_TOL: f64 = 1e-8;
const CONTINUOUS_RELATION_TOL: f64 = 1e-6;
const RELATION_INSTANCES: usize = 20;
const MC_SIGMAS: f64 = 3.0;
const SINE_DRAWS: usize = 100_000;
const SINE_NODES: usize = 801;
const SINE_CLIP: f64 = 0.5;
const SINE_RUNTIME: Duration = Duration::from_secs(300);
const CAUCHY_TOL: f64 = 1e-3;
const PALM_DRAWS: usize = 10_000;
const ADDITIVE_DRAWS: usize = 10_000;
const PV_GROWTH_TOL: f64 = 0.1;

fn line(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} | {detail}");
}

fn max_value(reports: &[Report], metric: &str) -> f64 {
    reports
        .iter()
        .filter(|r| r.metric == metric)
        .map(|r| r.value)
        .fold(0.0, f64::max)
}

fn failures(reports: &[Report]) -> Vec<&Report> {
    reports.iter().filter(|r| !r.pass).collect()
}

#[test]
fn criterion_01_enumeration_sanity() {
    let t = Instant::now();
    let mut worst_sum: f64 = 0.0;
    let mut min_prob = f64::INFINITY;
    for (_, p) in verify::frame_instances(SEED, verify::INSTANCES).unwrap() {
        let law = oracle::enumerate(&p).unwrap();
        worst_sum = worst_sum.max((law.total() - 1.0).abs());
        min_prob = min_prob.min(law.min_prob());
    }
    let elapsed = t.elapsed();
    let pass = worst_sum <= ENUM_SUM_TOL && min_prob >= 0.0 && elapsed < ENUM_RUNTIME;
    line(
        1,
        pass,
        &format!("50 frames: max |sum - 1| = {worst_sum:.2e}, min prob = {min_prob:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_palm_identity() {
    let t = Instant::now();
    let reports = verify::palm_suite(SEED, Fault::None).unwrap();
    let elapsed = t.elapsed();
    let bad = failures(&reports);
    let pass = bad.is_empty() && elapsed < PALM_RUNTIME;
    line(
        2,
        pass,
        &format!(
            "{} checks, max TV = {:.2e} (tol {:.0e}), {} failed, {elapsed:.2?}",
            reports.len(),
            max_value(&reports, "tv"),
            oracle::CONDITION_TV_TOL,
            bad.len()
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_03_hole_identity() {
    let reports = verify::hole_suite(SEED).unwrap();
    let bad = failures(&reports);
    let impossible: Vec<&Report> = reports.iter().filter(|r| r.metric == "impossible_event").collect();
    let branch = !impossible.is_empty() && impossible.iter().all(|r| r.pass);
    let pass = bad.is_empty() && branch;
    line(
        3,
        pass,
        &format!(
            "{} checks, max TV = {:.2e} (tol {:.0e}), error branch at P(q,q)=1 refused: {branch}",
            reports.len(),
            max_value(&reports, "tv"),
            oracle::CONDITION_TV_TOL
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_04_integrable_forms() {
    let mut rng = SamplerState::new(SEED, 4).rng();
    let mut u = move || uniform(&mut rng);

    let s = kernels::sine();
    let q = -5.0 + 10.0 * u();
    let pairs: Vec<(f64, f64)> = (0..FORM_PAIRS).map(|_| (-10.0 + 20.0 * u(), -10.0 + 20.0 * u())).collect();
    let form = palm::palm_integrable_form(&s, q).unwrap();
    let direct = UpdatedKernel::particle(Arc::new(s), q).unwrap();
    let sine_palm = palm::form_agreement(&form, &direct, &pairs).unwrap();

    let d = kernels::discrete_sine(0.5).unwrap();
    let qi = (-5.0 + (11.0 * u()).floor()).min(5.0);
    let ints: Vec<(f64, f64)> = (0..FORM_PAIRS)
        .map(|_| ((-30.0 + (61.0 * u()).floor()), (-30.0 + (61.0 * u()).floor())))
        .collect();
    let form = palm::palm_integrable_form(&d, qi).unwrap();
    let direct = UpdatedKernel::particle(Arc::new(d.clone()), qi).unwrap();
    let dsine_palm = palm::form_agreement(&form, &direct, &ints).unwrap();
    let form = palm::hole_integrable_form(&d, qi).unwrap();
    let direct = UpdatedKernel::hole(Arc::new(d), qi).unwrap();
    let dsine_hole = palm::form_agreement(&form, &direct, &ints).unwrap();

    let worst = sine_palm.max(dsine_palm).max(dsine_hole);
    let pass = worst <= FORM_TOL;
    line(
        4,
        pass,
        &format!(
            "{FORM_PAIRS} pairs each: sine palm {sine_palm:.2e}, discrete sine palm {dsine_palm:.2e}, hole {dsine_hole:.2e} (tol {FORM_TOL:.0e})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_multiplicative_identity() {
    let reports = verify::mult_suite(SEED).unwrap();
    let bad = failures(&reports);
    let zeros = (0..verify::INSTANCES).filter(|k| k % 5 == 0).count();
    let pass = bad.is_empty();
    line(
        5,
        pass,
        &format!(
            "50 pairs ({zeros} with zero coordinates): max TV = {:.2e} (tol {:.0e}), max normalizer error = {:.2e} (tol {:.0e})",
            max_value(&reports, "tv"),
            oracle::SOLVE_TV_TOL,
            max_value(&reports, "normalizer"),
            oracle::NORMALIZER_TOL
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_06_subspace_relations() {
    let mut worst_discrete: f64 = 0.0;
    for k in 0..RELATION_INSTANCES {
        let n = 6 + k % 3;
        let r = (1 + k % 4).min(n - 2);
        let state = SamplerState::new(SEED, 60_000 + k as u64);
        let (p, _) = oracle::random_op_ensemble(n, r, &state).unwrap();
        let mut rng = state.at(1).rng();
        let pi = ((uniform(&mut rng) * n as f64) as usize).min(n - 1);
        let qi = (pi + 1 + ((uniform(&mut rng) * (n - 1) as f64) as usize).min(n - 2)) % n;
        worst_discrete = worst_discrete.max(palm::discrete_subspace_defect(&p, pi, qi).unwrap());
    }

    let sp = GroundSpace::quadrature(-20.0, 20.0, 401, QuadratureRule::Trapezoid).unwrap();
    let sine = kernels::sine();
    let p = kernels::discretize(&sine, &sp, SINE_CLIP).unwrap();
    let ext = NystromKernel::new(Arc::new(sine), &p).unwrap();
    let one = palm::continuous_subspace_defect(&p, &ext, &[0.31], &[-0.47]).unwrap();
    let two = palm::continuous_subspace_defect(&p, &ext, &[0.31, 1.13], &[-0.47, 0.88]).unwrap();
    let worst_continuous = one.max(two);

    let pass = worst_discrete <= DISCRETE_RELATION_TOL && worst_continuous <= CONTINUOUS_RELATION_TOL;
    line(
        6,
        pass,
        &format!(
            "discrete: max defect {worst_discrete:.2e} over {RELATION_INSTANCES} (tol {DISCRETE_RELATION_TOL:.0e}); \
             continuous sine on 401 nodes: l=1 {one:.2e}, l=2 {two:.2e} (tol {CONTINUOUS_RELATION_TOL:.0e})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_rn_exactness_discrete() {
    let reports = verify::rn_suite(SEED, Fault::None).unwrap();
    let bad = failures(&reports);
    let pass = bad.is_empty();
    line(
        7,
        pass,
        &format!(
            "{} permutations (l <= 3): max relative error {:.2e} (tol {:.0e}), both/neither cases exactly 1: {}",
            verify::RN_INSTANCES,
            max_value(&reports, "max_rel_error"),
            oracle::RN_REL_TOL,
            reports.iter().filter(|r| r.metric.starts_with("trivial")).all(|r| r.pass)
        ),
    );
    assert!(pass, "{bad:?}");
}

/// Discretized sine on [-20, 20], a bump on V = (-1, 1) moving 0.025 to
/// 0.325, and counting events on I = (0.025, 1.525). Both interval ends and
/// their images sit halfway between nodes, so node counts match interval
/// counts of the continuum process.
struct SineRun {
    p: ProjectionMatrix,
    ext: NystromKernel,
    map: Diffeo,
    stages: Vec<Stage>,
    interval: (f64, f64),
    rows: Vec<(usize, usize, RNReport)>,
    elapsed: Duration,
}

const EVENT_COUNTS: [usize; 4] = [0, 1, 2, 3];

fn sine_run() -> &'static SineRun {
    static RUN: OnceLock<SineRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let sp = GroundSpace::quadrature(-20.0, 20.0, SINE_NODES, QuadratureRule::Trapezoid).unwrap();
        let sine = kernels::sine();
        let p = kernels::discretize(&sine, &sp, SINE_CLIP).unwrap();
        let ext = NystromKernel::new(Arc::new(sine), &p).unwrap();
        let a = 0.025;
        let map = Diffeo::bump(0.0, 1.0, 0.3 / bump_profile(a).0);
        map.validate(sp.window.unwrap(), 4096).unwrap();
        let stages = Stage::radii(&[2.5, 5.0, 10.0, 20.0]);
        let interval = (a, 1.525);
        let (fa, fb) = (map.apply(interval.0), map.apply(interval.1));
        let cache = DiffeoCache::new(&p, &ext, &map, stages.clone());
        let pts = sp.points.clone();
        let count_in = |x: &Configuration, lo: f64, hi: f64| x.indices().iter().filter(|&&i| pts[i] > lo && pts[i] < hi).count();
        let rows = mc::map_draws(&p, SINE_DRAWS, &SamplerState::new(SEED, 8), |_, x| {
            let r = cache.report(&x).unwrap();
            (count_in(&x, interval.0, interval.1), count_in(&x, fa, fb), r)
        });
        let elapsed = t.elapsed();
        SineRun {
            p,
            ext,
            map,
            stages,
            interval,
            rows,
            elapsed,
        }
    })
}

#[test]
fn criterion_08_rn_sine_statistical() {
    let run = sine_run();
    let mut parts = Vec::new();
    let mut pass = run.elapsed < SINE_RUNTIME;
    for k in EVENT_COUNTS {
        // P(F(E)) - E[1_E R] for E = {#(X ∩ I) = k}
        let d: Vec<f64> = run
            .rows
            .iter()
            .map(|(c, cf, r)| (*cf == k) as u8 as f64 - (*c == k) as u8 as f64 * r.value)
            .collect();
        let m = oracle::mc_compare(&d, 0.0, MC_SIGMAS);
        pass &= m.pass;
        parts.push(format!("k={k}: {:+.4}±{:.4} ({:.2}σ)", m.mean, m.std_error, m.sigmas));
    }
    let values: Vec<f64> = run.rows.iter().map(|(_, _, r)| r.value).collect();
    let e = oracle::mc_compare(&values, 1.0, MC_SIGMAS);
    pass &= e.pass;
    line(
        8,
        pass,
        &format!(
            "{SINE_DRAWS} draws on {SINE_NODES} nodes, I = ({}, {}): {}; E[R] = {:.4}±{:.4} ({:.2}σ); {:.1?}",
            run.interval.0,
            run.interval.1,
            parts.join(", "),
            e.mean,
            e.std_error,
            e.sigmas,
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_regularized_convergence() {
    let run = sine_run();
    let diffs: Vec<f64> = run
        .rows
        .iter()
        .filter_map(|(_, _, r)| {
            let k = r.stages.len();
            (k >= 2).then(|| (r.stages[k - 1].psi - r.stages[k - 2].psi).abs())
        })
        .collect();
    let mean_cauchy = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let max_cauchy = diffs.iter().copied().fold(0.0, f64::max);

    // E Ψ̄ = 1 under the Palm measure at q, the measure it is normalized under
    let q = run.p.space.node_index(0.3).unwrap();
    let palm = palm::palm_frame(&run.p, &[q]).unwrap();
    let ctx = functionals::DiffeoContext::new(&run.p, &run.ext, &run.map, &[q], &run.stages).unwrap();
    let psis: Vec<f64> = mc::map_draws(&palm, PALM_DRAWS, &SamplerState::new(SEED, 9), |_, x| {
        ctx.report(&x).unwrap().psi_bar
    });
    let m = oracle::mc_compare(&psis, 1.0, MC_SIGMAS);

    let pass = mean_cauchy <= CAUCHY_TOL && m.pass;
    line(
        9,
        pass,
        &format!(
            "stages R = 2.5, 5, 10, 20: mean |Ψ̄_K - Ψ̄_(K-1)| = {mean_cauchy:.2e}, max {max_cauchy:.2e} (tol {CAUCHY_TOL:.0e}); \
             Palm MC mean of Ψ̄ at q = 0.3: {:.4}±{:.4} ({:.2}σ)",
            m.mean, m.std_error, m.sigmas
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_additive_moments() {
    let sp = GroundSpace::integers(-30, 30).unwrap();
    let p = kernels::discretize(&kernels::discrete_sine(0.5).unwrap(), &sp, 1e-2).unwrap();
    let f = |g: fn(f64) -> f64| FunctionalSpec::function(kernels::scalar_fn(g));
    let tests: [(&str, FunctionalSpec); 5] = [
        ("gaussian", f(|x| (-(x / 4.0) * (x / 4.0)).exp())),
        ("indicator[-5,5]", f(|x| (x.abs() <= 5.0) as u8 as f64)),
        ("cos(x/3)", f(|x| (x / 3.0).cos())),
        ("ramp", f(|x| (x / 10.0).clamp(-1.0, 1.0))),
        ("1 + x^2/100 on [-10,10]", f(|x| if x.abs() <= 10.0 { 1.0 + x * x / 100.0 } else { 0.0 })),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (name, spec)) in tests.iter().enumerate() {
        let v = spec.node_values(&sp).unwrap();
        let mean = functionals::additive_expectation(spec, &p).unwrap();
        let var = functionals::additive_variance(spec, &p).unwrap();
        let s = mc::map_draws(&p, ADDITIVE_DRAWS, &SamplerState::new(SEED, 100 + k as u64), |_, x| {
            x.indices().iter().map(|&i| v[i]).sum::<f64>()
        });
        let a = oracle::mc_compare(&s, mean, MC_SIGMAS);
        let b = oracle::mc_compare_variance(&s, var, MC_SIGMAS);
        pass &= a.pass && b.pass;
        parts.push(format!("{name}: mean {:.2}σ var {:.2}σ", a.sigmas, b.sigmas));
    }

    // principal value of Σ 1/x
    let recip = || FunctionalSpec::function(kernels::scalar_fn(|x| if x == 0.0 { 0.0 } else { 1.0 / x }));
    let mut vars = Vec::new();
    for n in [30i64, 60, 120] {
        let sp = GroundSpace::integers(-n, n).unwrap();
        let p = kernels::discretize(&kernels::discrete_sine(0.5).unwrap(), &sp, 1e-2).unwrap();
        vars.push((p.clone(), functionals::additive_variance(&recip(), &p).unwrap()));
    }
    let growth = (vars[2].1 - vars[1].1).abs() / vars[1].1;
    let (p60, var60) = &vars[1];
    let v60 = recip().node_values(&p60.space).unwrap();
    let s = mc::map_draws(p60, ADDITIVE_DRAWS, &SamplerState::new(SEED, 110), |_, x| {
        x.indices().iter().map(|&i| v60[i]).sum::<f64>()
    });
    let pv = oracle::mc_compare_variance(&s, *var60, MC_SIGMAS);
    pass &= pv.pass && growth <= PV_GROWTH_TOL;
    line(
        10,
        pass,
        &format!(
            "discrete sine(0.5) on -30..30, {ADDITIVE_DRAWS} draws: {}; principal value 1/x: Var = {:.4}, {:.4}, {:.4} on N = 30, 60, 120 (growth {growth:.3}), empirical {:.4} ({:.2}σ)",
            parts.join(", "),
            vars[0].1,
            vars[1].1,
            vars[2].1,
            pv.mean,
            pv.sigmas
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_sampler() {
    let reports = verify::sampler_suite(SEED).unwrap();
    let bad = failures(&reports);
    let pass = bad.is_empty();
    line(
        11,
        pass,
        &format!(
            "3 kernels x {} draws: cardinality violations {}, max one-point z {:.2}, max two-point z {:.2} (bound {})",
            verify::SAMPLER_DRAWS,
            max_value(&reports, "cardinality_violations"),
            max_value(&reports, "one_point_max_z"),
            max_value(&reports, "two_point_max_z"),
            oracle::SAMPLER_Z
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_12_fault_sensitivity() {
    let palm = verify::palm_suite(SEED, Fault::PalmSignFlip).unwrap();
    let rn = verify::rn_suite(SEED, Fault::PalmSignFlip).unwrap();
    let palm_failed = failures(&palm).len();
    let rn_failed = failures(&rn).len();
    let pass = palm_failed > 0 && rn_failed > 0;
    line(
        12,
        pass,
        &format!(
            "with the sign-flip fault: criterion 2 checks failing {palm_failed}/{}, criterion 7 checks failing {rn_failed}/{}",
            palm.len(),
            rn.len()
        ),
    );
    assert!(pass);
}
