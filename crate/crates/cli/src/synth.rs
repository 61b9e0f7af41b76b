//! `salseg synth`: materialize the synthetic benchmark.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use salseg::evalkit::{synth_benchmark, write_benchmark, SynthParams};

use crate::common::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n_images: usize,
    #[arg(long, default_value_t = 4)]
    n_classes: usize,
    /// Patch grid side.
    #[arg(long, default_value_t = 24)]
    grid: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 96)]
    size: usize,
    /// Attention noise of the provider scenes.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Attention decay of the provider scenes.
    #[arg(long, default_value_t = 0.3)]
    decay: f64,
    /// Uniform per-channel pixel noise amplitude.
    #[arg(long, default_value_t = 4)]
    pixel_noise: u8,
}

pub fn run(args: SynthArgs) -> CmdResult {
    let params = SynthParams {
        seed: args.seed,
        n_images: args.n_images,
        n_classes: args.n_classes,
        grid: args.grid,
        size: args.size,
        noise: args.noise,
        decay: args.decay,
        pixel_noise: args.pixel_noise,
    };
    let dataset = synth_benchmark(&params).map_err(|e| match e {
        salseg::evalkit::EvalError::Params(m) => Failure::Usage(m),
        other => Failure::Runtime(other.into()),
    })?;
    let manifest = write_benchmark(&args.out, &dataset)
        .with_context(|| format!("writing the benchmark to {}", args.out.display()))?;
    println!("wrote {} images to {}", manifest.len(), args.out.display());
    Ok(())
}
