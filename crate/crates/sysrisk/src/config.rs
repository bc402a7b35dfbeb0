//! Fully resolved job descriptions.
//!
//! A [`Job`] holds every setting that influences output bytes, so it is
//! what the manifest records and what `rerun` replays. Worker count is
//! deliberately absent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sysrisk_core::synthetic::SyntheticSpec;
use sysrisk_core::{RunConfig, ValuationSpec};

use crate::ingest::EquitySource;

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.005, 0.01, 0.05];
pub const DEFAULT_ALPHAS: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0];
pub const DEFAULT_RECOVERY: f64 = 0.4;
pub const DEFAULT_RECORD_STEPS: [usize; 3] = [3, 5, 10];
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ValuationKind {
    /// Contagion on default with a recovery rate.
    Furfine,
    /// Linear DebtRank.
    Dr,
    /// Non-linear DebtRank with damping `alpha`.
    Nldr,
}

/// A valuation kind with the parameter values to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationSweep {
    pub kind: ValuationKind,
    pub recovery: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ValuationSweep {
    pub fn specs(&self) -> Vec<ValuationSpec> {
        match self.kind {
            ValuationKind::Furfine => {
                self.recovery.iter().map(|&recovery| ValuationSpec::Furfine { recovery }).collect()
            }
            ValuationKind::Dr => vec![ValuationSpec::LinearDebtRank],
            ValuationKind::Nldr => self.alpha.iter().map(|&alpha| ValuationSpec::NonlinearDebtRank { alpha }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub tolerance: f64,
    pub max_rounds: usize,
    pub record_steps: Vec<usize>,
}

impl DynamicsConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig { tolerance: self.tolerance, max_rounds: self.max_rounds, record_steps: self.record_steps.clone() }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let base = RunConfig::default();
        DynamicsConfig {
            tolerance: base.tolerance,
            max_rounds: base.max_rounds,
            record_steps: DEFAULT_RECORD_STEPS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub edges: PathBuf,
    #[serde(flatten)]
    pub equity: EquitySource,
}

impl InputConfig {
    pub fn files(&self) -> Vec<&Path> {
        let mut v = vec![self.edges.as_path()];
        v.extend(self.equity.files());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthJob {
    pub spec: SyntheticSpec,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitNullJob {
    pub input: InputConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleJob {
    pub params: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressJob {
    pub input: InputConfig,
    pub valuation: ValuationSweep,
    pub lambdas: Vec<f64>,
    pub default_bank: Option<String>,
    pub dynamics: DynamicsConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceJob {
    pub input: InputConfig,
    pub valuation: ValuationSweep,
    pub dynamics: DynamicsConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleJob {
    /// The observed network and its equity; equity is held fixed across
    /// the ensemble.
    pub input: InputConfig,
    pub params: PathBuf,
    pub valuation: ValuationSweep,
    pub lambdas: Vec<f64>,
    pub relevance: bool,
    pub samples: usize,
    pub seed: u64,
    pub dynamics: DynamicsConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJob {
    pub stats: PathBuf,
    pub deciles: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Synth(SynthJob),
    FitNull(FitNullJob),
    Sample(SampleJob),
    Stress(StressJob),
    Relevance(RelevanceJob),
    Ensemble(EnsembleJob),
    Report(ReportJob),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Synth(_) => "synth",
            Job::FitNull(_) => "fit-null",
            Job::Sample(_) => "sample",
            Job::Stress(_) => "stress",
            Job::Relevance(_) => "relevance",
            Job::Ensemble(_) => "ensemble",
            Job::Report(_) => "report",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Job::Synth(j) => &j.out_dir,
            Job::FitNull(j) => &j.out_dir,
            Job::Sample(j) => &j.out_dir,
            Job::Stress(j) => &j.out_dir,
            Job::Relevance(j) => &j.out_dir,
            Job::Ensemble(j) => &j.out_dir,
            Job::Report(j) => &j.out_dir,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Job::Synth(j) => j.out_dir = dir,
            Job::FitNull(j) => j.out_dir = dir,
            Job::Sample(j) => j.out_dir = dir,
            Job::Stress(j) => j.out_dir = dir,
            Job::Relevance(j) => j.out_dir = dir,
            Job::Ensemble(j) => j.out_dir = dir,
            Job::Report(j) => j.out_dir = dir,
        }
    }

    /// Input files whose digests go into the manifest.
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Job::Synth(_) => Vec::new(),
            Job::FitNull(j) => j.input.files(),
            Job::Sample(j) => vec![j.params.as_path()],
            Job::Stress(j) => j.input.files(),
            Job::Relevance(j) => j.input.files(),
            Job::Ensemble(j) => {
                let mut v = j.input.files();
                v.push(&j.params);
                v
            }
            Job::Report(j) => {
                let mut v = vec![j.stats.as_path()];
                v.extend(j.deciles.as_deref());
                v
            }
        }
    }
}
