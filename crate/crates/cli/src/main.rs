use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use fci_core::experiment::{emit_report, load_config, preset, preset_names, run_scenario, BulkChoice, Solver};
use log::info;

/// Runs cavity-stabilization scenarios and writes CSV reports.
#[derive(Debug, Parser)]
#[command(name = "fci-stab", version)]
struct Args {
    /// Built-in scenario id.
    #[arg(long, conflicts_with = "config", required_unless_present_any = ["config", "list"])]
    scenario: Option<String>,
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    /// traj, rates or both.
    #[arg(long)]
    solver: Option<Solver>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// default (outer ring excluded) or literal.
    #[arg(long)]
    bulk: Option<BulkChoice>,
    /// Print the built-in scenarios and exit.
    #[arg(long)]
    list: bool,
}

fn run(args: Args) -> anyhow::Result<()> {
    if args.list {
        for name in preset_names() {
            let cfg = preset(name)?;
            let tag = if cfg.unsupported.is_some() { " [data only]" } else { "" };
            println!("{name:<10} {}{tag}", cfg.description);
        }
        return Ok(());
    }
    let mut cfg = match (&args.scenario, &args.config) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => load_config(path)?,
        (None, None) => bail!("give --scenario or --config"),
    };
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = args.trajectories {
        cfg.run.trajectories = n;
    }
    if let Some(s) = args.solver {
        cfg.solver = s;
    }
    if let Some(b) = args.bulk {
        cfg.run.bulk = b;
    }
    if let Some(dir) = args.out {
        cfg.run.output = Some(dir);
    }
    cfg.validate()?;

    let report = run_scenario(&cfg).with_context(|| format!("running {}", cfg.scenario))?;
    let dir = cfg.output_dir();
    let written = emit_report(&report, &dir).with_context(|| format!("writing {}", dir.display()))?;
    info!("{} files written to {}", written.len(), dir.display());
    print!("{}", std::fs::read_to_string(dir.join("summary.txt"))?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
