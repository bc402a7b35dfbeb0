//! Job execution. Each job renders its outputs in memory first; the files
//! and the manifest are written afterwards.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sysrisk_core::ensemble::{decile_profile, evaluate, summarize, DecileGroup, Scenario};
use sysrisk_core::sdecm::{fit, FitTargets};
use sysrisk_core::synthetic::generate;
use sysrisk_core::{apply_shock, run, ShockSpec, SingleDefaultCache, ValuationSpec};

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::files::{edges_csv, fmt_f64, fmt_opt, sheets_csv, CsvOut};
use crate::ingest::{ingest, load_params, params_json};
use crate::manifest::{FileDigest, RunManifest, MANIFEST_FILE};
use crate::parallel::{ensemble_outcomes, thread_pool};

pub const STATS_HEADER: [&str; 14] = [
    "valuation",
    "parameter",
    "scenario",
    "lambda",
    "metric",
    "bank_or_aggregate",
    "round",
    "observed",
    "mean",
    "std",
    "z",
    "rel_dev",
    "m",
    "seed",
];

/// Rendered output files, in the order they are listed in the manifest.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    /// False when some trajectory hit the round cap.
    pub converged: bool,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts { files: Vec::new(), converged: true }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

/// A finished run.
#[derive(Debug)]
pub struct Executed {
    pub manifest: RunManifest,
    pub converged: bool,
}

/// Renders the outputs of `job` without touching the output directory.
pub fn produce(job: &Job, threads: Option<usize>) -> CliResult<Artifacts> {
    match job {
        Job::Synth(j) => synth(j),
        Job::FitNull(j) => fit_null(j),
        Job::Sample(j) => sample(j),
        Job::Stress(j) => stress(j),
        Job::Relevance(j) => relevance(j),
        Job::Ensemble(j) => ensemble(j, threads),
        Job::Report(j) => report(j),
    }
}

/// Runs `job`, writes its outputs and `manifest.json` into the output
/// directory.
pub fn execute(job: &Job, threads: Option<usize>) -> CliResult<Executed> {
    let inputs = job.inputs().into_iter().map(FileDigest::of_file).collect::<CliResult<Vec<_>>>()?;
    let artifacts = produce(job, threads)?;
    let dir = job.out_dir();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut outputs = Vec::with_capacity(artifacts.files.len());
    for (name, bytes) in &artifacts.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        outputs.push(FileDigest::of_bytes(name.clone(), bytes));
    }
    let manifest = RunManifest::new(job.clone(), inputs, outputs);
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(Executed { manifest, converged: artifacts.converged })
}

/// Result of replaying a manifest.
#[derive(Debug)]
pub struct Replay {
    pub executed: Executed,
    /// Output files whose digest differs from the recorded one.
    pub mismatched: Vec<String>,
}

/// Replays the job recorded in a manifest, optionally into another
/// directory, and compares output digests.
pub fn rerun(manifest_path: &Path, out_dir: Option<PathBuf>, threads: Option<usize>) -> CliResult<Replay> {
    let recorded = RunManifest::load(manifest_path)?;
    recorded.verify_inputs()?;
    let mut job = recorded.job.clone();
    if let Some(dir) = out_dir {
        job.set_out_dir(dir);
    }
    let executed = execute(&job, threads)?;
    let fresh: BTreeMap<&str, &str> =
        executed.manifest.outputs.iter().map(|d| (d.path.as_str(), d.sha256.as_str())).collect();
    let mut mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|d| fresh.get(d.path.as_str()) != Some(&d.sha256.as_str()))
        .map(|d| d.path.clone())
        .collect();
    for d in &executed.manifest.outputs {
        if !recorded.outputs.iter().any(|r| r.path == d.path) {
            mismatched.push(d.path.clone());
        }
    }
    Ok(Replay { executed, mismatched })
}

fn synth(job: &SynthJob) -> CliResult<Artifacts> {
    let snap = generate(&job.spec)?;
    let mut out = Artifacts::new();
    out.add("edges.csv", edges_csv(&snap.network).into_bytes());
    out.add("sheets.csv", sheets_csv(snap.network.banks().labels(), &snap.equity).into_bytes());
    Ok(out)
}

fn fit_null(job: &FitNullJob) -> CliResult<Artifacts> {
    let snap = ingest(&job.input.edges, &job.input.equity)?;
    let targets = FitTargets::from_network(&snap.network)?;
    let params = fit(&targets)?;
    let mut out = Artifacts::new();
    out.add("params.json", params_json(&params));
    Ok(out)
}

fn sample(job: &SampleJob) -> CliResult<Artifacts> {
    let params = load_params(&job.params)?;
    let sampler = params.sampler();
    let width = job.count.saturating_sub(1).to_string().len();
    let mut out = Artifacts::new();
    for k in 0..job.count {
        let net = sampler.sample(job.seed, k as u64);
        out.add(format!("sample_{k:0width$}.csv"), edges_csv(&net).into_bytes());
    }
    Ok(out)
}

fn valuation_specs(sweep: &ValuationSweep) -> CliResult<Vec<ValuationSpec>> {
    let specs = sweep.specs();
    if specs.is_empty() {
        return Err(CliError::Usage("empty valuation sweep".into()));
    }
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

fn check_lambdas(lambdas: &[f64]) -> CliResult<()> {
    for &lambda in lambdas {
        ShockSpec::ProportionalAll { lambda }.validate()?;
    }
    Ok(())
}

fn stress(job: &StressJob) -> CliResult<Artifacts> {
    let snap = ingest(&job.input.edges, &job.input.equity)?;
    let specs = valuation_specs(&job.valuation)?;
    let cfg = job.dynamics.run_config();
    cfg.validate()?;
    check_lambdas(&job.lambdas)?;
    let labels = snap.labels().to_vec();
    let mut shocks: Vec<(ShockSpec, String, String)> = job
        .lambdas
        .iter()
        .map(|&lambda| (ShockSpec::ProportionalAll { lambda }, "proportional".into(), fmt_f64(lambda)))
        .collect();
    if let Some(bank) = &job.default_bank {
        let idx = snap.network.banks().require(bank)?;
        shocks.push((ShockSpec::DefaultOne { bank: idx }, "default".into(), bank.clone()));
    }
    if shocks.is_empty() {
        return Err(CliError::Usage("no shock given".into()));
    }

    let mut out = Artifacts::new();
    let mut h = CsvOut::new(&["valuation", "parameter", "shock", "shock_value", "round", "h", "terminal", "converged"]);
    let mut eq = CsvOut::new(&[
        "valuation",
        "parameter",
        "shock",
        "shock_value",
        "bank",
        "equity0",
        "equity1",
        "equity_terminal",
    ]);
    for spec in &specs {
        let (name, param) = (spec.name(), fmt_opt(spec.parameter()));
        for (shock, kind, value) in &shocks {
            let state = apply_shock(&snap.sheets, *shock)?;
            let traj = run(&snap.network, &state, *spec, &cfg)?;
            out.converged &= traj.converged;
            let conv = traj.converged.to_string();
            for &t in &cfg.record_steps {
                let t = t.min(traj.terminal_round());
                h.row([name, &param, kind, value, &t.to_string(), &fmt_f64(traj.h_at(t)), "false", &conv]);
            }
            let last = traj.terminal_round();
            h.row([name, &param, kind, value, &last.to_string(), &fmt_f64(traj.h_terminal()), "true", &conv]);
            for (i, label) in labels.iter().enumerate() {
                eq.row([
                    name,
                    &param,
                    kind,
                    value,
                    label,
                    &fmt_f64(traj.initial()[i]),
                    &fmt_f64(traj.shocked()[i]),
                    &fmt_f64(traj.terminal()[i]),
                ]);
            }
        }
    }
    out.add("stress_h.csv", h.into_bytes());
    out.add("stress_equity.csv", eq.into_bytes());
    Ok(out)
}

fn relevance(job: &RelevanceJob) -> CliResult<Artifacts> {
    let snap = ingest(&job.input.edges, &job.input.equity)?;
    let specs = valuation_specs(&job.valuation)?;
    let cfg = job.dynamics.run_config();
    cfg.validate()?;
    let mut out = Artifacts::new();
    let mut csv = CsvOut::new(&["valuation", "parameter", "bank", "equity0", "impact", "vulnerability"]);
    for spec in &specs {
        let cache = SingleDefaultCache::compute(&snap.network, &snap.sheets, *spec, &cfg)?;
        out.converged &= cache.all_converged;
        let rel = cache.relevance();
        let param = fmt_opt(spec.parameter());
        for (i, label) in snap.labels().iter().enumerate() {
            csv.row([
                spec.name(),
                &param,
                label,
                &fmt_f64(snap.equity[i]),
                &fmt_f64(rel.impact[i]),
                &fmt_f64(rel.vulnerability[i]),
            ]);
        }
    }
    out.add("relevance.csv", csv.into_bytes());
    Ok(out)
}

fn decile_rows(csv: &mut CsvOut, spec: &ValuationSpec, metric: &str, groups: &[DecileGroup]) {
    let param = fmt_opt(spec.parameter());
    for g in groups {
        csv.row([
            spec.name(),
            &param,
            metric,
            &g.group.to_string(),
            &g.size.to_string(),
            &fmt_f64(g.equity_min),
            &fmt_f64(g.equity_max),
            &fmt_f64(g.observed_mean),
            &fmt_f64(g.expected_mean),
        ]);
    }
}

fn ensemble(job: &EnsembleJob, threads: Option<usize>) -> CliResult<Artifacts> {
    let snap = ingest(&job.input.edges, &job.input.equity)?;
    let params = load_params(&job.params)?;
    if params.labels.as_slice() != snap.labels() {
        return Err(CliError::Validation("the fitted model and the observed network list different banks".into()));
    }
    let specs = valuation_specs(&job.valuation)?;
    let cfg = job.dynamics.run_config();
    cfg.validate()?;
    check_lambdas(&job.lambdas)?;
    if job.samples == 0 {
        return Err(CliError::Usage("sample count must be positive".into()));
    }
    let mut scenarios: Vec<Scenario> = job.lambdas.iter().map(|&lambda| Scenario::Aggregate { lambda }).collect();
    if job.relevance {
        scenarios.push(Scenario::Relevance);
    }
    if scenarios.is_empty() {
        return Err(CliError::Usage("no scenario: give shock sizes or ask for relevance".into()));
    }

    let sampler = params.sampler();
    let pool = thread_pool(threads)?;
    let labels = snap.labels().to_vec();
    let (m, seed) = (job.samples.to_string(), job.seed.to_string());
    let mut out = Artifacts::new();
    let mut stats = CsvOut::new(&STATS_HEADER);
    let mut deciles = CsvOut::new(&[
        "valuation",
        "parameter",
        "metric",
        "group",
        "size",
        "equity_min",
        "equity_max",
        "observed_mean",
        "expected_mean",
    ]);
    for spec in &specs {
        let param = fmt_opt(spec.parameter());
        for &scenario in &scenarios {
            let observed = evaluate(&snap.network, &snap.equity, scenario, *spec, &cfg)?;
            let samples = pool
                .install(|| ensemble_outcomes(&sampler, &snap.equity, scenario, *spec, &cfg, job.samples, job.seed))?;
            out.converged &= observed.converged && samples.iter().all(|s| s.converged);
            let (kind, lambda) = match scenario {
                Scenario::Aggregate { lambda } => ("proportional", fmt_f64(lambda)),
                Scenario::Relevance => ("single_default", String::new()),
            };
            for s in summarize(&observed, &samples, &labels, &cfg.record_steps) {
                let round = s.round.map_or_else(|| "terminal".to_string(), |r| r.to_string());
                stats.row([
                    spec.name(),
                    &param,
                    kind,
                    &lambda,
                    &s.metric,
                    &s.subject,
                    &round,
                    &fmt_f64(s.observed),
                    &fmt_f64(s.mean),
                    &fmt_opt(s.std),
                    &fmt_opt(s.z),
                    &fmt_opt(s.relative_deviation),
                    &m,
                    &seed,
                ]);
            }
            if scenario == Scenario::Relevance {
                let profile = decile_profile(&observed, &samples, &snap.equity);
                decile_rows(&mut deciles, spec, "impact", &profile.impact);
                decile_rows(&mut deciles, spec, "vulnerability", &profile.vulnerability);
            }
        }
    }
    out.add("ensemble_stats.csv", stats.into_bytes());
    if job.relevance {
        out.add("deciles.csv", deciles.into_bytes());
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct StatsRow {
    valuation: String,
    parameter: Option<f64>,
    scenario: String,
    lambda: Option<f64>,
    metric: String,
    bank_or_aggregate: String,
    round: String,
    observed: f64,
    mean: f64,
    std: Option<f64>,
    z: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct DecileRow {
    valuation: String,
    parameter: Option<f64>,
    metric: String,
    group: usize,
    equity_min: f64,
    equity_max: f64,
    observed_mean: f64,
    expected_mean: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Format { path: path.into(), message: format!("{other:?}") },
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| CliError::Parse {
                path: path.into(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

/// `mean +- k std` band, blank when the spread is undefined.
fn band(mean: f64, std: Option<f64>, k: f64) -> (String, String) {
    match std {
        Some(s) => (fmt_f64(mean - k * s), fmt_f64(mean + k * s)),
        None => (String::new(), String::new()),
    }
}

fn report(job: &ReportJob) -> CliResult<Artifacts> {
    let rows: Vec<StatsRow> = read_rows(&job.stats)?;
    let mut out = Artifacts::new();

    let mut bands = CsvOut::new(&[
        "valuation",
        "parameter",
        "scenario",
        "lambda",
        "metric",
        "bank_or_aggregate",
        "round",
        "observed",
        "mean",
        "lower_1sd",
        "upper_1sd",
        "lower_2sd",
        "upper_2sd",
        "lower_3sd",
        "upper_3sd",
        "z",
        "outside_3sd",
    ]);
    for r in &rows {
        let (l1, u1) = band(r.mean, r.std, 1.0);
        let (l2, u2) = band(r.mean, r.std, 2.0);
        let (l3, u3) = band(r.mean, r.std, 3.0);
        let outside = r.z.map(|z| (z.abs() > 3.0).to_string()).unwrap_or_default();
        bands.row([
            r.valuation.as_str(),
            &fmt_opt(r.parameter),
            &r.scenario,
            &fmt_opt(r.lambda),
            &r.metric,
            &r.bank_or_aggregate,
            &r.round,
            &fmt_f64(r.observed),
            &fmt_f64(r.mean),
            &l1,
            &u1,
            &l2,
            &u2,
            &l3,
            &u3,
            &fmt_opt(r.z),
            &outside,
        ]);
    }
    out.add("bands.csv", bands.into_bytes());

    // terminal H against the valuation parameter, one block per shock size
    let mut sweep: Vec<&StatsRow> =
        rows.iter().filter(|r| r.metric == "H" && r.round == "terminal" && r.lambda.is_some()).collect();
    sweep.sort_by(|a, b| {
        a.valuation
            .cmp(&b.valuation)
            .then(a.lambda.unwrap().total_cmp(&b.lambda.unwrap()))
            .then(a.parameter.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.parameter.unwrap_or(f64::NEG_INFINITY)))
    });
    let mut table = CsvOut::new(&["valuation", "lambda", "parameter", "observed", "mean", "std"]);
    for r in sweep {
        table.row([
            r.valuation.as_str(),
            &fmt_opt(r.lambda),
            &fmt_opt(r.parameter),
            &fmt_f64(r.observed),
            &fmt_f64(r.mean),
            &fmt_opt(r.std),
        ]);
    }
    out.add("parameter_sweep.csv", table.into_bytes());

    if let Some(path) = &job.deciles {
        let rows: Vec<DecileRow> = read_rows(path)?;
        let mut csv = CsvOut::new(&[
            "valuation",
            "parameter",
            "metric",
            "group",
            "equity_min",
            "equity_max",
            "observed_mean",
            "expected_mean",
            "difference",
        ]);
        for r in &rows {
            csv.row([
                r.valuation.as_str(),
                &fmt_opt(r.parameter),
                &r.metric,
                &r.group.to_string(),
                &fmt_f64(r.equity_min),
                &fmt_f64(r.equity_max),
                &fmt_f64(r.observed_mean),
                &fmt_f64(r.expected_mean),
                &fmt_f64(r.observed_mean - r.expected_mean),
            ]);
        }
        out.add("decile_bands.csv", csv.into_bytes());
    }
    Ok(out)
}
