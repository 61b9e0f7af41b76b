//! `salseg eval`: per-class IoU and mIoU of predicted rasters against
//! ground truth, paired by file name.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use rayon::prelude::*;
use salseg::evalkit::{load_label_raster_checked, ClassList, ConfusionAccumulator};
use serde::Serialize;

use crate::common::{load_classes, usage, with_jobs, write_json, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `.pgm` label rasters.
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Directory of ground-truth `.pgm` label rasters.
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// Class list, one name per line (label `i + 1` is line `i`).
    #[arg(long, value_name = "FILE")]
    classes: PathBuf,
    /// Where to write the JSON report.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Count background in the mean.
    #[arg(long)]
    include_background: bool,
    /// Raster pairs scored in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    pairs: usize,
    missing_predictions: Vec<String>,
    missing_ground_truth: Vec<String>,
    include_background: bool,
    per_class: Vec<ClassIou>,
    miou: f64,
}

#[derive(Debug, Serialize)]
struct ClassIou {
    name: String,
    /// `None` when the class appears in neither raster.
    iou: Option<f64>,
}

pub fn run(args: EvalArgs) -> CmdResult {
    let classes = load_classes(&args.classes)?;
    let pred = pgm_names(&args.pred)?;
    let gt = pgm_names(&args.gt)?;
    let pairs: Vec<&String> = gt.intersection(&pred).collect();
    let missing_predictions: Vec<String> = gt.difference(&pred).cloned().collect();
    let missing_ground_truth: Vec<String> = pred.difference(&gt).cloned().collect();
    for name in &missing_predictions {
        eprintln!("missing prediction: {name}");
    }
    for name in &missing_ground_truth {
        eprintln!("missing ground truth: {name}");
    }
    if pairs.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "no file names in common between {} and {}",
            args.pred.display(),
            args.gt.display()
        )));
    }

    let k = classes.len();
    let acc = with_jobs(args.jobs, || {
        pairs
            .par_iter()
            .map(|name| -> anyhow::Result<ConfusionAccumulator> {
                let truth = load_label_raster_checked(&args.gt.join(name), k)?;
                let predicted = load_label_raster_checked(&args.pred.join(name), k)?;
                let mut acc = ConfusionAccumulator::new(k);
                acc.add(&truth, &predicted).with_context(|| name.to_string())?;
                Ok(acc)
            })
            .try_reduce(
                || ConfusionAccumulator::new(k),
                |mut a, b| {
                    a.merge(&b)?;
                    Ok(a)
                },
            )
    })??;
    let miou = acc
        .miou(args.include_background)
        .map_err(|e| Failure::Runtime(anyhow!("{e}")))?;
    let report = EvalReport {
        pairs: pairs.len(),
        missing_predictions,
        missing_ground_truth,
        include_background: args.include_background,
        per_class: per_class(&classes, &acc),
        miou,
    };
    print!("{}", table(&report));
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    let missing = report.missing_predictions.len() + report.missing_ground_truth.len();
    if missing > 0 {
        return Err(Failure::Runtime(anyhow!("{missing} rasters have no counterpart")));
    }
    Ok(())
}

/// File names of the `.pgm` files directly in `dir`.
fn pgm_names(dir: &Path) -> CmdResult<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::Runtime(e.into()))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "pgm") {
            if let Some(name) = path.file_name() {
                names.insert(name.to_string_lossy().into_owned());
            }
        }
    }
    if names.is_empty() {
        return usage(format!("{} contains no .pgm rasters", dir.display()));
    }
    Ok(names)
}

fn per_class(classes: &ClassList, acc: &ConfusionAccumulator) -> Vec<ClassIou> {
    let names = std::iter::once("background".to_string()).chain(classes.names().iter().cloned());
    names
        .zip(acc.iou_per_class())
        .map(|(name, iou)| ClassIou { name, iou })
        .collect()
}

fn table(report: &EvalReport) -> String {
    let width = report.per_class.iter().map(|c| c.name.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  IoU\n", "class");
    for c in &report.per_class {
        let iou = c.iou.map_or("-".to_string(), |v| format!("{v:.4}"));
        out += &format!("{:<width$}  {iou}\n", c.name);
    }
    out += &format!("{:<width$}  {:.4}\n", "mIoU", report.miou);
    out
}
