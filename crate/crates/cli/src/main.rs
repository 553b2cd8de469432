//! `posekit`: synthesize, augment, train, annotate, evaluate, triangulate
//! and report.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AnnotateArgs, EvaluateArgs, ReportArgs, SynthArgs, TrainArgs, TriangulateArgs};
use config::{ConfigArgs, RunConfig};

/// Worker threads for the parallel kernels; unset uses every core.
pub const THREADS_ENV: &str = "POSEKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "posekit", version, about = "Landmark regression pipeline")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a two-view synthetic dataset into --out-dir
    Synth(SynthArgs),
    /// Split --data-dir frames and write augmented training batches
    Augment,
    /// Train on an augment output directory
    Train(TrainArgs),
    /// Predict landmarks for every frame of --data-dir
    Annotate(AnnotateArgs),
    /// Per-landmark MAE of predictions against --data-dir annotations
    Evaluate(EvaluateArgs),
    /// Reconstruct 3D poses from two views
    Triangulate(TriangulateArgs),
    /// Charts and tables from evaluate and train outputs
    Report(ReportArgs),
}

/// A run that completed but missed its target.
#[derive(Debug)]
pub struct MetricFailure(pub String);

impl std::fmt::Display for MetricFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MetricFailure {}

/// 1 for divergence or a missed metric, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let failed_run = err.chain().any(|e| {
        e.is::<MetricFailure>()
            || matches!(e.downcast_ref::<posekit::Error>(), Some(posekit::Error::Divergence { .. }))
    });
    if failed_run {
        1
    } else {
        2
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let cfg = RunConfig::resolve(&cli.config)?;
    match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Augment => commands::augment(&cfg),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Annotate(a) => commands::annotate(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::Triangulate(a) => commands::triangulate(&cfg, a),
        Command::Report(a) => commands::report(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
