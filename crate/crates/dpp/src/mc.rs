//! Parallel Monte Carlo over counter-addressed draws.
//!
//! Draw `k` of a batch always uses `state.at(state.counter + k)`, so results
//! do not depend on the number of threads or on how work is split.

use dpp_core::ground::Configuration;
use dpp_core::kernels::ProjectionMatrix;
use dpp_core::sampler::{self, SamplerState};
use rayon::prelude::*;

pub const THREADS_ENV: &str = "DPP_THREADS";

/// Pool sized by `DPP_THREADS` when set, else rayon's default.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Maps `f(k, draw_k)` over `count` draws, in draw order.
pub fn map_draws<T, F>(p: &ProjectionMatrix, count: usize, state: &SamplerState, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Configuration) -> T + Sync,
{
    thread_pool().install(|| {
        (0..count as u64)
            .into_par_iter()
            .map(|k| {
                let st = state.at(state.counter + k);
                f(k, sampler::sample(p, &st))
            })
            .collect()
    })
}

pub fn draws(p: &ProjectionMatrix, count: usize, state: &SamplerState) -> Vec<Configuration> {
    map_draws(p, count, state, |_, x| x)
}
