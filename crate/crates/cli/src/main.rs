use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dfrc_core::harness::{
    run_single, run_subcarrier_sweep, run_tradeoff_sweep, summarize, write_rows_csv,
    write_summary_csv, RunStatus, ScenarioConfig, SweepResult,
};
use dfrc_core::optimizer::write_trace_csv;
use dfrc_core::validate::run_suite;

/// Log level variable, read by `env_logger` (e.g. `DFRC_LOG=info`).
const LOG_ENV: &str = "DFRC_LOG";

/// Some requested run did not complete (solver failure).
const EXIT_INCOMPLETE: u8 = 2;
/// The identity suite found a violated check.
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "dfrc",
    version,
    about = "Wideband OFDM dual-function radar-communication beamforming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One design (trial 0) with constraint audit and echo-level check.
    /// Prints a JSON report; `--out` receives the MM trace.
    Single(Common),
    /// Radar SINR versus the number of subcarriers.
    SweepSubcarriers(SweepArgs),
    /// Radar SINR versus the communication SINR requirement.
    SweepTradeoff(SweepArgs),
    /// Run the operator and surrogate identity checks on random instances.
    Validate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario JSON; defaults to the preset of the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the trial count (instance count for `validate`).
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Per-point averages are written here.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Add the per-run `wall_time_s` column (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

fn load_config(args: &Common, preset: fn() -> ScenarioConfig) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => preset(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.experiment.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn single(args: &Common) -> Result<ExitCode> {
    let cfg = load_config(args, ScenarioConfig::tradeoff_preset)?;
    let report = run_single(&cfg)?;
    if let (Some(path), Some(design)) = (&args.out, &report.design) {
        write_trace_csv(&design.trace, output(Some(path))?)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.status == RunStatus::Failed {
        ExitCode::from(EXIT_INCOMPLETE)
    } else {
        ExitCode::SUCCESS
    })
}

fn sweep(
    args: &SweepArgs,
    preset: fn() -> ScenarioConfig,
    run: fn(&ScenarioConfig, usize) -> dfrc_core::Result<SweepResult>,
) -> Result<ExitCode> {
    let cfg = load_config(&args.common, preset)?;
    let result = run(&cfg, args.common.jobs)?;
    write_rows_csv(&result, output(args.common.out.as_deref())?, args.timing)?;
    let summary = summarize(&result, cfg.experiment.averaging);
    if let Some(path) = &args.summary {
        write_summary_csv(&summary, output(Some(path))?)?;
    }
    for s in &summary {
        log::info!(
            "{} x={}: {:?} dB over {} trials ({} not ok)",
            s.curve,
            s.x,
            s.mean_radar_sinr_db,
            s.trials_ok,
            s.trials_not_ok
        );
    }
    let failed = result
        .rows
        .iter()
        .filter(|r| r.status == RunStatus::Failed)
        .count();
    if failed > 0 {
        log::error!("{failed} of {} runs did not complete", result.rows.len());
        return Ok(ExitCode::from(EXIT_INCOMPLETE));
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &Common) -> Result<ExitCode> {
    let instances = args.trials.unwrap_or(20);
    let outcomes = run_suite(instances, args.seed.unwrap_or(1))?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "check,instances,worst,tolerance,passed")?;
    for o in &outcomes {
        writeln!(
            out,
            "{},{},{:e},{:e},{}",
            o.name, o.instances, o.worst, o.tolerance, o.passed
        )?;
        eprintln!("{o}");
    }
    out.flush()?;
    Ok(if outcomes.iter().all(|o| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Single(a) => single(a),
        Command::SweepSubcarriers(a) => sweep(
            a,
            ScenarioConfig::subcarrier_sweep_preset,
            run_subcarrier_sweep,
        ),
        Command::SweepTradeoff(a) => sweep(a, ScenarioConfig::tradeoff_preset, run_tradeoff_sweep),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
