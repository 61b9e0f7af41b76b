//! `salseg tune`: staged random search over layer, head, threshold and
//! blur sigma.
//!
//! Writes `trace.ndjson` (one line per evaluation), `best_config.json` and
//! `tune_report.json` under `--out`.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::anyhow;
use clap::Args;
use salseg::evalkit::{read_ppm, PaletteFile};
use salseg::provider::{ProviderSpec, SyntheticScene};
use salseg::tuner::{
    staged_tune, ConfigEvaluator, DatasetEvaluator, PaletteOracle, PlantedLandscape, Scored, SearchSpace,
    SubprocessOracle, TraceRecord, TunerError, ValidationItem,
};
use salseg::PipelineConfig;
use serde::Serialize;

use crate::common::{
    config_hash, load_manifest, read_json, stem, unix_time, usage, write_bytes, write_json, CmdResult, Failure,
    PipelineArgs, ProcessArgs, ProviderArg,
};

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Validation manifest (images and present classes). Not needed with
    /// `--oracle planted`.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// `synthetic` (manifest scenes) or `subprocess:<command>`.
    #[arg(long, default_value = "synthetic")]
    provider: String,
    /// `palette[:<palette.json>]` (colour oracle, default file next to the
    /// manifest), `subprocess:<command>`, or `planted` (analytic landscape
    /// peaked at the default configuration).
    #[arg(long, default_value = "palette")]
    oracle: String,
    /// JSON search space; defaults to the reference grid.
    #[arg(long, value_name = "FILE")]
    space: Option<PathBuf>,
    /// Layer blocks searched in parallel during stage 1.
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// Evaluations per group and stage.
    #[arg(long, default_value_t = 34)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    process: ProcessArgs,
}

#[derive(Debug, Clone, PartialEq)]
enum OracleArg {
    Palette(Option<PathBuf>),
    Subprocess(String),
    Planted,
}

impl OracleArg {
    fn parse(text: &str) -> CmdResult<Self> {
        match text.split_once(':') {
            None if text == "palette" => Ok(Self::Palette(None)),
            None if text == "planted" => Ok(Self::Planted),
            Some(("palette", path)) if !path.is_empty() => Ok(Self::Palette(Some(path.into()))),
            Some(("subprocess", command)) if !command.trim().is_empty() => Ok(Self::Subprocess(command.into())),
            _ => usage(format!(
                "oracle must be `palette[:<file>]`, `subprocess:<command>` or `planted`, got `{text}`"
            )),
        }
    }
}

/// The evaluators `staged_tune` can drive from the command line.
enum Evaluator {
    Planted(PlantedLandscape),
    Palette(DatasetEvaluator<PaletteOracle>),
    Subprocess(DatasetEvaluator<SubprocessOracle>),
}

impl ConfigEvaluator for Evaluator {
    fn evaluate(&mut self, config: &PipelineConfig) -> Result<Scored, TunerError> {
        match self {
            Self::Planted(e) => e.evaluate(config),
            Self::Palette(e) => e.evaluate(config),
            Self::Subprocess(e) => e.evaluate(config),
        }
    }
}

#[derive(Debug, Serialize)]
struct TuneReport {
    best: PipelineConfig,
    config_hash: String,
    stage1_best_reward: f64,
    stage2_best_reward: Option<f64>,
    evaluations: usize,
    groups: usize,
    iters: usize,
    seed: u64,
    search_space: SearchSpace,
    finished_unix: u64,
    total_ms: f64,
}

pub fn run(args: TuneArgs) -> CmdResult {
    let started = Instant::now();
    let base = args.pipeline.resolve()?;
    let oracle = OracleArg::parse(&args.oracle)?;
    let space: SearchSpace = match &args.space {
        None => SearchSpace::reference(),
        Some(path) => read_json(path).map_err(|e| Failure::Usage(format!("{e:#}")))?,
    };
    space.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if args.groups == 0 || args.groups > space.layer.len() {
        return usage(format!(
            "--groups must be between 1 and the number of layers ({})",
            space.layer.len()
        ));
    }
    if args.iters == 0 {
        return usage("--iters must be at least 1");
    }
    let mut evaluators = build_evaluators(&args, &oracle)?;
    let outcome = staged_tune(&space, &base, &mut evaluators, args.iters, args.seed)
        .map_err(|e| Failure::Runtime(anyhow!("tuning failed: {e}")))?;
    for evaluator in evaluators {
        if let Evaluator::Subprocess(e) = evaluator {
            if let Err(err) = e.into_oracle().shutdown() {
                log::warn!("oracle shutdown: {err}");
            }
        }
    }

    write_bytes(
        &args.out.join("trace.ndjson"),
        TraceRecord::to_ndjson(outcome.trace()).as_bytes(),
    )?;
    write_json(&args.out.join("best_config.json"), &outcome.config)?;
    let report = TuneReport {
        best: outcome.config.clone(),
        config_hash: config_hash(&outcome.config),
        stage1_best_reward: outcome.stage1.best_reward,
        stage2_best_reward: outcome.stage2.as_ref().map(|s| s.best_reward),
        evaluations: outcome.evaluations(),
        groups: args.groups,
        iters: args.iters,
        seed: args.seed,
        search_space: space,
        finished_unix: unix_time(),
        total_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    write_json(&args.out.join("tune_report.json"), &report)?;
    let c = &outcome.config;
    println!(
        "best: layer {} head {} threshold {} blur sigma {} ({} evaluations)",
        c.layer, c.head, c.threshold, c.blur_sigma, report.evaluations
    );
    Ok(())
}

fn build_evaluators(args: &TuneArgs, oracle: &OracleArg) -> CmdResult<Vec<Evaluator>> {
    if *oracle == OracleArg::Planted {
        return Ok((0..args.groups)
            .map(|_| Evaluator::Planted(PlantedLandscape::reference()))
            .collect());
    }
    let Some(manifest) = &args.manifest else {
        return usage("--manifest is required unless --oracle planted");
    };
    let (dir, entries) = load_manifest(manifest)?;
    if entries.is_empty() {
        return usage("the manifest lists no images");
    }
    let provider = ProviderArg::parse(&args.provider)?;
    let mut items = Vec::with_capacity(entries.len());
    for entry in &entries {
        let spec = match &provider {
            ProviderArg::SyntheticPerItem => {
                let Some(scene) = &entry.scene else {
                    return usage(format!("manifest entry {} has no scene", entry.image.display()));
                };
                ProviderSpec::Synthetic(read_json::<SyntheticScene>(scene)?)
            }
            ProviderArg::SyntheticScene(_) => return usage("tune takes `--provider synthetic` or a subprocess"),
            ProviderArg::Subprocess(command) => ProviderSpec::Subprocess {
                command: command.clone(),
                image: entry.image.display().to_string(),
                grid: args.process.grid,
                timeout: args.process.timeout(),
            },
        };
        let image = read_ppm(&entry.image).map_err(|e| Failure::Runtime(e.into()))?;
        items.push(ValidationItem {
            name: stem(&entry.image),
            image,
            classes: entry.classes_present.clone(),
            provider: spec,
        });
    }
    let items: std::sync::Arc<[ValidationItem]> = items.into();
    match oracle {
        OracleArg::Planted => unreachable!("handled above"),
        OracleArg::Palette(path) => {
            let path = path.clone().unwrap_or_else(|| dir.join("palette.json"));
            let palette: PaletteFile = read_json(&path).map_err(|e| Failure::Usage(format!("{e:#}")))?;
            let oracle = PaletteOracle::new(palette);
            Ok((0..args.groups)
                .map(|_| Evaluator::Palette(DatasetEvaluator::new(items.clone(), oracle.clone())))
                .collect())
        }
        OracleArg::Subprocess(command) => (0..args.groups)
            .map(|_| {
                let oracle = SubprocessOracle::start(command, args.process.timeout())
                    .map_err(|e| Failure::Runtime(anyhow!("oracle unavailable: {e}")))?;
                Ok(Evaluator::Subprocess(DatasetEvaluator::new(items.clone(), oracle)))
            })
            .collect(),
    }
}
