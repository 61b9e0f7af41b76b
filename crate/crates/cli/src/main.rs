//! `salseg`: segment images, tune hyperparameters, score predictions and
//! generate the synthetic benchmark.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod common;
mod eval;
mod segment;
mod serve;
mod synth;
mod tune;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "salseg",
    version,
    about = "Training-free open-vocabulary segmentation from VLM salience"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment one image or every image of a manifest.
    Segment(segment::SegmentArgs),
    /// Random-search layer, head, threshold and blur sigma.
    Tune(tune::TuneArgs),
    /// Score predicted label rasters against ground truth.
    Eval(eval::EvalArgs),
    /// Write the synthetic benchmark to disk.
    Synth(synth::SynthArgs),
    /// Serve synthetic scenes (and optionally a palette oracle) over the
    /// line protocol on stdin/stdout.
    ServeSynthetic(serve::ServeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .parse_default_env()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Segment(args) => segment::run(args),
        Command::Tune(args) => tune::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Synth(args) => synth::run(args),
        Command::ServeSynthetic(args) => serve::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
