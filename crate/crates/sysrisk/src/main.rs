use std::process::ExitCode;

use clap::Parser;
use sysrisk::cli::{self, Cli, Command};
use sysrisk::error::exit;
use sysrisk::{execute, rerun, CliError, CliResult};

fn run(cli: Cli) -> CliResult<i32> {
    let job = match &cli.command {
        Command::Synth(a) => cli::resolve_synth(a)?,
        Command::FitNull(a) => cli::resolve_fit_null(a)?,
        Command::Sample(a) => cli::resolve_sample(a)?,
        Command::Stress(a) => cli::resolve_stress(a)?,
        Command::Relevance(a) => cli::resolve_relevance(a)?,
        Command::Ensemble(a) => cli::resolve_ensemble(a)?,
        Command::Report(a) => cli::resolve_report(a)?,
        Command::Rerun(a) => {
            let replay = rerun(&a.manifest, a.out_dir.clone(), cli.threads)?;
            for d in &replay.executed.manifest.outputs {
                let status = if replay.mismatched.contains(&d.path) { "DIFFERS" } else { "identical" };
                println!("{status}  {}  {}", d.sha256, d.path);
            }
            if !replay.mismatched.is_empty() {
                return Err(CliError::Validation(format!(
                    "{} output(s) differ from the manifest",
                    replay.mismatched.len()
                )));
            }
            return Ok(if replay.executed.converged { exit::OK } else { exit::NOT_CONVERGED });
        }
    };
    let done = execute(&job, cli.threads)?;
    let dir = job.out_dir();
    for d in &done.manifest.outputs {
        println!("{}  {}", d.sha256, dir.join(&d.path).display());
    }
    if !done.converged {
        eprintln!("warning: some trajectories hit the round cap; see the `converged` columns");
        return Ok(exit::NOT_CONVERGED);
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
