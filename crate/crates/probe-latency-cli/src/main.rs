//! Command-line pipeline for measuring probe speed feed latency against a
//! roadside re-identification reference.

mod reports;
mod stages;

use clap::{Parser, Subcommand};
use probe_latency::config::PipelineConfig;
use probe_latency::error::Result;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "probe-latency",
    version,
    about = "Measure how far a probe speed feed lags reality",
    long_about = "Pairs roadside re-identification sightings into ground-truth travel times, \
                  aligns a probe speed feed against them over congestion episodes, and reports \
                  the feed's latency per episode, segment, period, and phase."
)]
struct Cli {
    /// Pipeline config file (TOML). Defaults are used when omitted.
    #[arg(long, global = true, env = "PROBE_LATENCY_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory for series files and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Restrict processing to these segment ids.
    #[arg(long, global = true, value_delimiter = ',')]
    segments: Vec<String>,

    /// Worker threads for per-segment and per-episode fan-out.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair detections into travel times and build the reference series.
    Ingest,
    /// Conflate the per-piece probe feed onto the segments.
    Prepare,
    /// Estimate latency over episode windows and write objective curves.
    Estimate,
    /// Analyze episodes: transitions, phases, latency per phase.
    Episodes,
    /// Generate a synthetic scenario with known injected latency.
    Synth {
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summaries, distribution, and plot data from episode analysis.
    Report,
    /// Run ingest, prepare, estimate, episodes, and report in order.
    All,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs > 0 && !probe_latency::exec::configure_threads(jobs) {
            eprintln!("note: --jobs {jobs} ignored (sequential build or pool already started)");
        }
    }

    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let c = PipelineConfig::default();
            c.validate()?;
            c
        }
    };
    let segment_filter: Option<BTreeSet<String>> = if cli.segments.is_empty() {
        None
    } else {
        Some(cli.segments.iter().cloned().collect())
    };
    let ctx = stages::Ctx {
        config,
        out: cli.out.clone(),
        segment_filter,
    };

    match cli.command {
        Command::Ingest => {
            stages::run_ingest(&ctx)?;
        }
        Command::Prepare => {
            stages::run_prepare(&ctx)?;
        }
        Command::Estimate => {
            stages::run_estimate(&ctx, None, None)?;
        }
        Command::Episodes => {
            stages::run_episodes_stage(&ctx, None, None)?;
        }
        Command::Synth { seed } => {
            stages::run_synth(&ctx, seed)?;
        }
        Command::Report => {
            stages::run_report(&ctx, None)?;
        }
        Command::All => {
            stages::run_all(&ctx)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
