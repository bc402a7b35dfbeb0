//! Observed versus expected systemic risk.
//!
//! The same scenario runs on the empirical network and on every network
//! drawn from the fitted null model. Each bank keeps its empirical equity
//! in every sample; net external assets absorb the sampled interbank
//! totals so the balance-sheet identity still holds.
//!
//! This module is sequential. Per-sample work is exposed through
//! [`evaluate_sample`] so a caller can spread samples over workers and
//! hand the ordered outcomes back to [`summarize`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::contagion::{apply_shock, run, RunConfig, ShockSpec, SingleDefaultCache};
use crate::error::{Error, Result};
use crate::network::{derive_balance_sheets, InterbankNetwork};
use crate::sdecm::{Sampler, SdecmParams};
use crate::valuation::ValuationSpec;

/// Which family of shocks an ensemble run uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Proportional shock to every bank; reports `H`.
    Aggregate { lambda: f64 },
    /// Every single-bank default; reports impact and vulnerability.
    Relevance,
}

/// Metrics measured on one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// `H` at each recorded round (aggregate scenario only).
    pub h_steps: Vec<f64>,
    /// Terminal `H` (aggregate scenario only).
    pub h_terminal: Option<f64>,
    /// Per-bank impact (relevance scenario only).
    pub impact: Vec<f64>,
    /// Per-bank vulnerability (relevance scenario only).
    pub vulnerability: Vec<f64>,
    pub converged: bool,
}

/// Runs `scenario` on `net` with the given per-bank equity.
pub fn evaluate(
    net: &InterbankNetwork,
    equity: &[f64],
    scenario: Scenario,
    valuation: ValuationSpec,
    cfg: &RunConfig,
) -> Result<Outcome> {
    let sheets = derive_balance_sheets(net, equity)?;
    match scenario {
        Scenario::Aggregate { lambda } => {
            let state = apply_shock(&sheets, ShockSpec::ProportionalAll { lambda })?;
            let traj = run(net, &state, valuation, cfg)?;
            Ok(Outcome {
                h_steps: cfg.record_steps.iter().map(|&t| traj.h_at(t)).collect(),
                h_terminal: Some(traj.h_terminal()),
                impact: Vec::new(),
                vulnerability: Vec::new(),
                converged: traj.converged,
            })
        }
        Scenario::Relevance => {
            let rel = SingleDefaultCache::compute(net, &sheets, valuation, cfg)?.relevance();
            Ok(Outcome {
                h_steps: Vec::new(),
                h_terminal: None,
                impact: rel.impact,
                vulnerability: rel.vulnerability,
                converged: rel.all_converged,
            })
        }
    }
}

/// Draws sample `index` and evaluates the scenario on it.
pub fn evaluate_sample(
    sampler: &Sampler,
    equity: &[f64],
    scenario: Scenario,
    valuation: ValuationSpec,
    cfg: &RunConfig,
    seed: u64,
    index: u64,
) -> Result<Outcome> {
    let net = sampler.sample(seed, index);
    evaluate(&net, equity, scenario, valuation, cfg)
}

/// Evaluates `m` samples in index order.
pub fn run_ensemble(
    params: &SdecmParams,
    equity: &[f64],
    scenario: Scenario,
    valuation: ValuationSpec,
    cfg: &RunConfig,
    m: usize,
    seed: u64,
) -> Result<Vec<Outcome>> {
    if equity.len() != params.n() {
        return Err(Error::LengthMismatch { expected: params.n(), found: equity.len() });
    }
    let sampler = params.sampler();
    (0..m as u64).map(|k| evaluate_sample(&sampler, equity, scenario, valuation, cfg, seed, k)).collect()
}

/// Sample mean and unbiased standard deviation by two passes in slice
/// order. The deviation is `None` with fewer than two samples.
pub fn mean_std(samples: &[f64]) -> (f64, Option<f64>) {
    let m = samples.len();
    if m == 0 {
        return (f64::NAN, None);
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some(libm::sqrt(ss / (m - 1) as f64)))
}

/// One observed-versus-expected comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub metric: String,
    /// Bank label, or `"aggregate"`.
    pub subject: String,
    /// Recorded round, `None` for terminal values.
    pub round: Option<usize>,
    pub observed: f64,
    pub mean: f64,
    pub std: Option<f64>,
    /// `(observed - mean) / std`; `None` when the deviation is undefined or
    /// zero.
    pub z: Option<f64>,
    /// `(observed - mean) / mean`; `None` when the mean is zero.
    pub relative_deviation: Option<f64>,
    pub count: usize,
}

impl EnsembleStats {
    pub fn compare(metric: &str, subject: &str, round: Option<usize>, observed: f64, samples: &[f64]) -> Self {
        let (mean, std) = mean_std(samples);
        let z = match std {
            Some(s) if s > 0.0 => Some((observed - mean) / s),
            _ => None,
        };
        let relative_deviation = if mean != 0.0 { Some((observed - mean) / mean) } else { None };
        EnsembleStats {
            metric: metric.to_string(),
            subject: subject.to_string(),
            round,
            observed,
            mean,
            std,
            z,
            relative_deviation,
            count: samples.len(),
        }
    }
}

/// Per-bank expected metrics averaged over the samples.
pub fn per_bank_means(outcomes: &[Outcome], pick: impl Fn(&Outcome) -> &[f64]) -> Vec<f64> {
    let Some(first) = outcomes.first() else {
        return Vec::new();
    };
    let n = pick(first).len();
    let mut acc = vec![0.0; n];
    for o in outcomes {
        for (a, v) in acc.iter_mut().zip(pick(o)) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / outcomes.len() as f64).collect()
}

/// All comparisons between an observed outcome and the ensemble outcomes.
///
/// `labels` names the banks and `record_steps` the rounds behind
/// `h_steps`.
pub fn summarize(
    observed: &Outcome,
    samples: &[Outcome],
    labels: &[String],
    record_steps: &[usize],
) -> Vec<EnsembleStats> {
    let mut out = Vec::new();
    for (k, &round) in record_steps.iter().enumerate() {
        if let Some(&obs) = observed.h_steps.get(k) {
            let xs: Vec<f64> = samples.iter().map(|s| s.h_steps[k]).collect();
            out.push(EnsembleStats::compare("H", "aggregate", Some(round), obs, &xs));
        }
    }
    if let Some(obs) = observed.h_terminal {
        let xs: Vec<f64> = samples.iter().filter_map(|s| s.h_terminal).collect();
        out.push(EnsembleStats::compare("H", "aggregate", None, obs, &xs));
    }
    for (metric, pick) in [
        ("impact", (|o: &Outcome| &o.impact[..]) as fn(&Outcome) -> &[f64]),
        ("vulnerability", |o: &Outcome| &o.vulnerability[..]),
    ] {
        for (i, &obs) in pick(observed).iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|s| pick(s)[i]).collect();
            out.push(EnsembleStats::compare(metric, &labels[i], None, obs, &xs));
        }
    }
    out
}

/// Group means of a per-bank metric over equity-ranked groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileGroup {
    /// 0 for the smallest banks.
    pub group: usize,
    pub size: usize,
    pub equity_min: f64,
    pub equity_max: f64,
    pub observed_mean: f64,
    pub expected_mean: f64,
}

/// Decile profiles for impact and vulnerability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileProfile {
    pub impact: Vec<DecileGroup>,
    pub vulnerability: Vec<DecileGroup>,
}

/// Splits banks into `min(10, n)` groups by equity rank (ties broken by
/// index) with sizes differing by at most one, and averages the observed
/// and expected metric inside each group.
pub fn decile_aggregate(observed: &[f64], expected: &[f64], equity: &[f64]) -> Vec<DecileGroup> {
    let n = equity.len();
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| equity[a].total_cmp(&equity[b]).then(a.cmp(&b)));
    let groups = n.min(10);
    (0..groups)
        .map(|g| {
            let members = &order[g * n / groups..(g + 1) * n / groups];
            let mean = |xs: &[f64]| members.iter().map(|&i| xs[i]).sum::<f64>() / members.len() as f64;
            DecileGroup {
                group: g,
                size: members.len(),
                equity_min: equity[members[0]],
                equity_max: equity[*members.last().unwrap()],
                observed_mean: mean(observed),
                expected_mean: mean(expected),
            }
        })
        .collect()
}

/// Decile profile of impact and vulnerability, with expected values taken
/// as per-bank sample means.
pub fn decile_profile(observed: &Outcome, samples: &[Outcome], equity: &[f64]) -> DecileProfile {
    let exp_impact = per_bank_means(samples, |o| &o.impact);
    let exp_vuln = per_bank_means(samples, |o| &o.vulnerability);
    DecileProfile {
        impact: decile_aggregate(&observed.impact, &exp_impact, equity),
        vulnerability: decile_aggregate(&observed.vulnerability, &exp_vuln, equity),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_scores() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (mean, std) = mean_std(&xs);
        let std = std.unwrap();
        assert_eq!(mean, 3.0);
        let s = EnsembleStats::compare("H", "aggregate", None, 3.0, &xs);
        assert_eq!(s.z, Some(0.0));
        let s = EnsembleStats::compare("H", "aggregate", None, mean + 2.0 * std, &xs);
        assert!((s.z.unwrap() - 2.0).abs() < 1e-12);
        assert!((s.relative_deviation.unwrap() - 2.0 * std / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_no_spread() {
        let s = EnsembleStats::compare("H", "aggregate", None, 0.2, &[0.1]);
        assert_eq!(s.mean, 0.1);
        assert_eq!(s.std, None);
        assert_eq!(s.z, None);
        let s = EnsembleStats::compare("H", "aggregate", None, 0.2, &[0.1, 0.1]);
        assert_eq!(s.std, Some(0.0));
        assert_eq!(s.z, None);
    }

    #[test]
    fn deciles_partition_evenly() {
        for n in [1, 7, 10, 23, 100] {
            let equity: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64).collect();
            let ones = vec![1.0; n];
            let groups = decile_aggregate(&ones, &ones, &equity);
            assert_eq!(groups.len(), n.min(10));
            assert_eq!(groups.iter().map(|g| g.size).sum::<usize>(), n);
            let (lo, hi) = (groups.iter().map(|g| g.size).min().unwrap(), groups.iter().map(|g| g.size).max().unwrap());
            assert!(hi - lo <= 1);
            assert!(groups.iter().all(|g| g.observed_mean == 1.0 && g.expected_mean == 1.0));
        }
    }

    #[test]
    fn decile_means_follow_rank() {
        let n = 20;
        let equity: Vec<f64> = (0..n).map(|i| ((i * 7) % n) as f64 + 1.0).collect();
        let groups = decile_aggregate(&equity, &equity, &equity);
        assert!(groups.windows(2).all(|w| w[0].observed_mean < w[1].observed_mean));
    }
}
