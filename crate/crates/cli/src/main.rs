use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use higgs_flow_cli::config::RunConfig;
use higgs_flow_cli::output::read_series;
use higgs_flow_cli::run::{execute, render, render_checks, series_invariants, RunOptions, RunReport, Status};
use higgs_flow_cli::scenario::Scenario;
use higgs_flow_cli::verify::verify;

#[derive(Parser)]
#[command(name = "hflow", version, about = "Donaldson heat flow on Higgs bundles over complex tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override `flow.record_every`.
    #[arg(long)]
    record_every: Option<usize>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow and write series, snapshot and report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Continue from a snapshot sidecar (`final.json`).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override `flow.max_steps`.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Evaluate identity and invariant checks and print a table.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Re-render the report of a finished run from its output directory.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(k) = common.record_every {
        cfg.flow.record_every = k;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, out_dir, resume, max_steps } => {
            let mut cfg = load(&common)?;
            if let Some(m) = max_steps {
                cfg.flow.max_steps = m;
            }
            let sc = Scenario::build(&cfg)?;
            let report = execute(&sc, &RunOptions { out_dir, resume })?;
            print!("{}", render(&report));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common } => {
            let cfg = load(&common)?;
            let sc = Scenario::build(&cfg)?;
            let rows = verify(&sc)?;
            print!("{}", render_checks(&rows));
            let failed = rows.iter().any(|r| r.status == Status::Fail);
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Report { out_dir } => {
            let path = out_dir.join("report.json");
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut report: RunReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if !report.series.is_empty() {
                let rows = read_series(&out_dir.join(&report.series))?;
                let det = report.invariants.iter().any(|r| r.name == "det_conservation" && r.status != Status::Skipped);
                let fresh = series_invariants(&rows, report.gauduchon, false, det, false);
                for row in fresh {
                    if let Some(slot) = report.invariants.iter_mut().find(|r| r.name == row.name && r.name != "m_monotone") {
                        *slot = row;
                    }
                }
                report.final_y = rows.last().map_or(f64::NAN, |r| r.y);
            }
            print!("{}", render(&report));
            Ok(ExitCode::SUCCESS)
        }
    }
}
