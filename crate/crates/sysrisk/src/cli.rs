//! Command-line flags and JSON config files.
//!
//! Every flag of a subcommand can also be given in a JSON config file
//! (`--config`) under the flag's long name, e.g. `{"alpha": [0, 1, 2]}`.
//! Flags on the command line win over the file; the output directory falls
//! back to `SYSRISK_OUT_DIR`, then to the current directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sysrisk_core::synthetic::SyntheticSpec;

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::ingest::EquitySource;

pub const OUT_DIR_ENV: &str = "SYSRISK_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "sysrisk", version, about = "Interbank contagion stress tests against a maximum-entropy null model")]
pub struct Cli {
    /// Worker threads for the ensemble stage.
    #[arg(long, global = true, env = crate::parallel::THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network and balance sheets.
    Synth(SynthArgs),
    /// Fit the null model to an observed network.
    FitNull(FitNullArgs),
    /// Draw networks from a fitted null model.
    Sample(SampleArgs),
    /// Shock the network and record the aggregate loss per round.
    Stress(StressArgs),
    /// Impact and vulnerability of every bank.
    Relevance(RelevanceArgs),
    /// Compare observed risk with the null-model ensemble.
    Ensemble(EnsembleArgs),
    /// Turn ensemble outputs into plot-ready tables.
    Report(ReportArgs),
    /// Replay a run from its manifest and check the outputs match.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Common {
    /// JSON file with defaults for any of this command's flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct InputArgs {
    /// Edge list CSV (`lender,borrower,amount`).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Balance-sheet CSV (`bank,equity`).
    #[arg(long)]
    pub sheets: Option<PathBuf>,
    /// Calibration CSV (`position,equity`) for imputing missing equity.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Log-log regression intercept for imputing missing equity.
    #[arg(long, allow_hyphen_values = true)]
    pub intercept: Option<f64>,
    /// Log-log regression slope for imputing missing equity.
    #[arg(long, allow_hyphen_values = true)]
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ValuationArgs {
    /// Valuation function.
    #[arg(long, value_enum)]
    pub valuation: Option<ValuationKind>,
    /// Recovery rates for `furfine` (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub recovery: Vec<f64>,
    /// Damping values for `nldr` (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct DynamicsArgs {
    /// Convergence tolerance on the relative equity change.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Round cap.
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Rounds at which the aggregate loss is reported (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub record_steps: Vec<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub median_strength: Option<f64>,
    #[arg(long)]
    pub sigma_strength: Option<f64>,
    /// Exponent coupling link probability to bank size.
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub equity_intercept: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub equity_slope: Option<f64>,
    #[arg(long)]
    pub equity_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct FitNullArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SampleArgs {
    /// Fitted parameters from `fit-null`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct StressArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub valuation: ValuationArgs,
    /// Proportional shock sizes (comma separated); defaults to
    /// 0.005,0.01,0.05 unless a default scenario is requested.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    /// Also run the scenario where this bank defaults.
    #[arg(long)]
    pub default_bank: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub dynamics: DynamicsArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct RelevanceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub valuation: ValuationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub dynamics: DynamicsArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct EnsembleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    /// Fitted parameters from `fit-null`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub valuation: ValuationArgs,
    /// Proportional shock sizes (comma separated); defaults to
    /// 0.005,0.01,0.05 unless only relevance is requested.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    /// Compare impact and vulnerability as well.
    #[arg(long)]
    pub relevance: bool,
    /// Ensemble size.
    #[arg(long, short = 'm')]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub dynamics: DynamicsArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ReportArgs {
    /// `ensemble_stats.csv` from `ensemble`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// `deciles.csv` from `ensemble --relevance`.
    #[arg(long)]
    pub deciles: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Overlays the flags that were given on top of the config file.
///
/// A flag counts as given unless it is absent, `false` or an empty list.
fn layered<A>(flags: &A, config: Option<&Path>) -> CliResult<A>
where
    A: Serialize + DeserializeOwned + Default,
{
    let Value::Object(known) = serde_json::to_value(A::default()).expect("args serialize") else {
        unreachable!("args serialize to an object")
    };
    let mut merged = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(CliError::Format { path: path.into(), message: "expected a JSON object".into() }),
                Err(e) => return Err(CliError::Format { path: path.into(), message: e.to_string() }),
            }
        }
        None => Map::new(),
    };
    if let Some(key) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Usage(format!("unknown config key `{key}`")));
    }
    let Value::Object(given) = serde_json::to_value(flags).expect("args serialize") else {
        unreachable!("args serialize to an object")
    };
    for (k, v) in given {
        let skip = match &v {
            Value::Null | Value::Bool(false) => true,
            Value::Array(a) => a.is_empty(),
            _ => false,
        };
        if !skip {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn input(a: &InputArgs) -> CliResult<InputConfig> {
    Ok(InputConfig {
        edges: a.edges.clone().ok_or_else(|| CliError::Usage("--edges is required".into()))?,
        equity: EquitySource {
            sheets: a.sheets.clone(),
            calibration: a.calibration.clone(),
            intercept: a.intercept,
            slope: a.slope,
        },
    })
}

fn valuation(a: &ValuationArgs) -> ValuationSweep {
    ValuationSweep {
        kind: a.valuation.unwrap_or(ValuationKind::Dr),
        recovery: if a.recovery.is_empty() { vec![DEFAULT_RECOVERY] } else { a.recovery.clone() },
        alpha: if a.alpha.is_empty() { DEFAULT_ALPHAS.to_vec() } else { a.alpha.clone() },
    }
}

fn dynamics(a: &DynamicsArgs) -> DynamicsConfig {
    let base = DynamicsConfig::default();
    DynamicsConfig {
        tolerance: a.tolerance.unwrap_or(base.tolerance),
        max_rounds: a.max_rounds.unwrap_or(base.max_rounds),
        record_steps: if a.record_steps.is_empty() { base.record_steps } else { a.record_steps.clone() },
    }
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

pub fn resolve_synth(flags: &SynthArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n: a.n.unwrap_or(d.n),
        median_strength: a.median_strength.unwrap_or(d.median_strength),
        sigma_strength: a.sigma_strength.unwrap_or(d.sigma_strength),
        coupling: a.coupling.unwrap_or(d.coupling),
        density: a.density.unwrap_or(d.density),
        equity_intercept: a.equity_intercept.unwrap_or(d.equity_intercept),
        equity_slope: a.equity_slope.unwrap_or(d.equity_slope),
        equity_noise: a.equity_noise.unwrap_or(d.equity_noise),
        seed: a.seed.unwrap_or(d.seed),
    };
    Ok(Job::Synth(SynthJob { spec, out_dir: out_dir(&a.common) }))
}

pub fn resolve_fit_null(flags: &FitNullArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    Ok(Job::FitNull(FitNullJob { input: input(&a.input)?, out_dir: out_dir(&a.common) }))
}

pub fn resolve_sample(flags: &SampleArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    Ok(Job::Sample(SampleJob {
        params: required(&a.params, "params")?,
        count: a.count.unwrap_or(1),
        seed: a.seed.unwrap_or(DEFAULT_SEED),
        out_dir: out_dir(&a.common),
    }))
}

pub fn resolve_stress(flags: &StressArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    let lambdas =
        if a.lambda.is_empty() && a.default_bank.is_none() { DEFAULT_LAMBDAS.to_vec() } else { a.lambda.clone() };
    Ok(Job::Stress(StressJob {
        input: input(&a.input)?,
        valuation: valuation(&a.valuation),
        lambdas,
        default_bank: a.default_bank.clone(),
        dynamics: dynamics(&a.dynamics),
        out_dir: out_dir(&a.common),
    }))
}

pub fn resolve_relevance(flags: &RelevanceArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    Ok(Job::Relevance(RelevanceJob {
        input: input(&a.input)?,
        valuation: valuation(&a.valuation),
        dynamics: dynamics(&a.dynamics),
        out_dir: out_dir(&a.common),
    }))
}

pub fn resolve_ensemble(flags: &EnsembleArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    let lambdas = if a.lambda.is_empty() && !a.relevance { DEFAULT_LAMBDAS.to_vec() } else { a.lambda.clone() };
    Ok(Job::Ensemble(EnsembleJob {
        input: input(&a.input)?,
        params: required(&a.params, "params")?,
        valuation: valuation(&a.valuation),
        lambdas,
        relevance: a.relevance,
        samples: a.samples.unwrap_or(DEFAULT_SAMPLES),
        seed: a.seed.unwrap_or(DEFAULT_SEED),
        dynamics: dynamics(&a.dynamics),
        out_dir: out_dir(&a.common),
    }))
}

pub fn resolve_report(flags: &ReportArgs) -> CliResult<Job> {
    let a = layered(flags, flags.common.config.as_deref())?;
    Ok(Job::Report(ReportJob {
        stats: required(&a.stats, "stats")?,
        deciles: a.deciles.clone(),
        out_dir: out_dir(&a.common),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sysrisk").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_resolve_with_defaults() {
        let Command::Stress(a) = parse(&["stress", "--edges", "e.csv", "--slope", "0.83", "--out-dir", "o"]).command
        else {
            panic!()
        };
        let Job::Stress(job) = resolve_stress(&a).unwrap() else { panic!() };
        assert_eq!(job.lambdas, DEFAULT_LAMBDAS);
        assert_eq!(job.valuation.kind, ValuationKind::Dr);
        assert_eq!(job.dynamics.record_steps, DEFAULT_RECORD_STEPS);
        assert_eq!(job.input.equity.slope, Some(0.83));
        assert_eq!(job.out_dir, PathBuf::from("o"));
    }

    #[test]
    fn default_bank_alone_skips_lambda_defaults() {
        let Command::Stress(a) =
            parse(&["stress", "--edges", "e.csv", "--sheets", "s.csv", "--default-bank", "1"]).command
        else {
            panic!()
        };
        let Job::Stress(job) = resolve_stress(&a).unwrap() else { panic!() };
        assert!(job.lambdas.is_empty());
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"{{"edges": "from_file.csv", "sheets": "s.csv", "valuation": "nldr", "alpha": [0, 2], "samples": 7, "relevance": true, "params": "p.json"}}"#
        )
        .unwrap();
        let path = f.path().to_str().unwrap();
        let Command::Ensemble(a) = parse(&["ensemble", "--config", path, "--edges", "flag.csv", "--seed", "5"]).command
        else {
            panic!()
        };
        let Job::Ensemble(job) = resolve_ensemble(&a).unwrap() else { panic!() };
        assert_eq!(job.input.edges, PathBuf::from("flag.csv"));
        assert_eq!(job.valuation.kind, ValuationKind::Nldr);
        assert_eq!(job.valuation.alpha, [0.0, 2.0]);
        assert_eq!((job.samples, job.seed), (7, 5));
        assert!(job.relevance);
        assert!(job.lambdas.is_empty());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"edgez": "x.csv"}}"#).unwrap();
        let path = f.path().to_str().unwrap();
        let Command::FitNull(a) = parse(&["fit-null", "--config", path]).command else { panic!() };
        assert!(matches!(resolve_fit_null(&a), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_required_flag() {
        let Command::Sample(a) = parse(&["sample"]).command else { panic!() };
        assert!(matches!(resolve_sample(&a), Err(CliError::Usage(_))));
    }
}
