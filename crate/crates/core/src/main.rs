use clap::{CommandFactory, Parser};
use mrlab::cli::{Cli, ExperimentConfig, Run};
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::from_cli(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.command.is_none() {
        eprintln!("{}", Cli::command().render_usage());
        if cfg.is_empty() {
            eprintln!("empty configuration: give a subcommand (see --help)");
        } else {
            eprintln!("no subcommand in flags or config");
        }
        return ExitCode::from(2);
    }
    let run = match Run::new(cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run.execute() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = run.cfg.out.clone().unwrap_or_else(|| "mrlab-out".into());
    if let Err(e) = report.write(&out) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::from(1);
    }
    match report.summary_json() {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
    let failed = report.failed();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for c in failed {
            eprintln!("FAILED {}: {} vs {}", c.check, c.value, c.tolerance);
        }
        ExitCode::from(1)
    }
}
