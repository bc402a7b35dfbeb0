//! Parallel ensemble evaluation.
//!
//! Samples are independent given `(seed, index)`, and results are collected
//! in index order, so every downstream number is the same for any worker
//! count.

use rayon::prelude::*;
use sysrisk_core::ensemble::{evaluate_sample, Outcome, Scenario};
use sysrisk_core::sdecm::Sampler;
use sysrisk_core::{RunConfig, ValuationSpec};

use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "SYSRISK_THREADS";

/// A pool with `threads` workers, or rayon's default when `None`.
pub fn thread_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    builder.build().map_err(|e| CliError::Usage(e.to_string()))
}

/// Evaluates samples `0..m` on the current pool, in index order.
pub fn ensemble_outcomes(
    sampler: &Sampler,
    equity: &[f64],
    scenario: Scenario,
    valuation: ValuationSpec,
    cfg: &RunConfig,
    m: usize,
    seed: u64,
) -> sysrisk_core::Result<Vec<Outcome>> {
    (0..m as u64).into_par_iter().map(|k| evaluate_sample(sampler, equity, scenario, valuation, cfg, seed, k)).collect()
}
