//! `salseg segment`: salience, dropout and refinement for one image or a
//! manifest of images.
//!
//! Output layout under `--out`:
//!
//! ```text
//! rasters/<name>.pgm         final labels (0 background, class index + 1)
//! masks/<name>/<class>.pgm   binary mask per present class (0 or 255)
//! soft/<name>.salt           soft masks the labels came from, f32 [K, H, W]
//! overlays/<name>.ppm        labels alpha-blended over the image
//! report.json                config, config hash, timings, diagnostics
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::Args;
use rayon::prelude::*;
use salseg::evalkit::{encode_pgm, encode_ppm, read_ppm, ClassList};
use salseg::provider::salt::{SaltData, SaltTensor};
use salseg::provider::{ProviderSpec, SyntheticScene};
use salseg::refine::{refine_pipeline, LabelRaster, SegmentationResult};
use salseg::salience::salience_dropout_run;
use salseg::{PipelineConfig, RgbImage};
use serde::Serialize;

use crate::common::{
    config_hash, load_classes, load_manifest, read_json, stem, unix_time, usage, with_jobs, write_bytes, write_json,
    CmdResult, Failure, PipelineArgs, ProcessArgs, ProviderArg,
};

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// `synthetic` (manifest scenes), `synthetic:<scene.json>` or
    /// `subprocess:<command>`.
    #[arg(long)]
    provider: String,
    /// Single input image (binary PPM).
    #[arg(
        long,
        value_name = "PPM",
        conflicts_with = "manifest",
        required_unless_present = "manifest"
    )]
    image: Option<PathBuf>,
    /// Classes present in `--image`, comma separated. Defaults to
    /// `class1..classK` for a synthetic scene with K classes.
    #[arg(long, value_delimiter = ',', requires = "image")]
    present: Vec<String>,
    /// Dataset manifest; every entry is segmented.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Class list numbering the output labels. Defaults to `classes.txt`
    /// next to the manifest, or the present classes of a single image.
    #[arg(long, value_name = "FILE")]
    classes: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Images processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    process: ProcessArgs,
}

/// One image to segment.
struct Job {
    name: String,
    image: PathBuf,
    present: Vec<String>,
    provider: ProviderSpec,
}

#[derive(Debug, Serialize)]
struct RunReport {
    config: PipelineConfig,
    config_hash: String,
    provider: String,
    classes: Vec<String>,
    finished_unix: u64,
    total_ms: f64,
    images: Vec<ImageReport>,
}

#[derive(Debug, Default, Serialize)]
struct ImageReport {
    name: String,
    image: PathBuf,
    present: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_active_patches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<usize>,
    timings_ms: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Default, Serialize)]
struct Timings {
    salience: f64,
    refine: f64,
    write: f64,
}

pub fn run(args: SegmentArgs) -> CmdResult {
    let started = Instant::now();
    let config = args.pipeline.resolve()?;
    let provider = ProviderArg::parse(&args.provider)?;
    let (jobs, classes) = plan(&args, &provider)?;
    let hash = config_hash(&config);
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", args.out.display())))?;

    let images: Vec<ImageReport> = with_jobs(args.jobs, || {
        jobs.par_iter()
            .map(|job| segment_one(job, &config, &classes, &args.out))
            .collect()
    })?;
    let failed: Vec<&ImageReport> = images.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!("{}: {}", r.name, r.error.as_deref().unwrap_or_default());
    }
    let n_failed = failed.len();
    let report = RunReport {
        config,
        config_hash: hash,
        provider: args.provider.clone(),
        classes: classes.names().to_vec(),
        finished_unix: unix_time(),
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        images,
    };
    write_json(&args.out.join("report.json"), &report)?;
    if n_failed > 0 {
        return Err(Failure::Runtime(anyhow!(
            "{n_failed} of {} images failed",
            report.images.len()
        )));
    }
    println!("segmented {} images into {}", report.images.len(), args.out.display());
    Ok(())
}

/// Resolve the jobs and the output class numbering.
fn plan(args: &SegmentArgs, provider: &ProviderArg) -> CmdResult<(Vec<Job>, ClassList)> {
    let subprocess = |command: &str, image: &Path| ProviderSpec::Subprocess {
        command: command.to_string(),
        image: image.display().to_string(),
        grid: args.process.grid,
        timeout: args.process.timeout(),
    };
    let (jobs, default_classes) = if let Some(manifest) = &args.manifest {
        let (dir, entries) = load_manifest(manifest)?;
        let mut jobs = Vec::with_capacity(entries.len());
        for entry in entries {
            let spec = match provider {
                ProviderArg::SyntheticPerItem => {
                    let Some(scene) = &entry.scene else {
                        return usage(format!("manifest entry {} has no scene", entry.image.display()));
                    };
                    ProviderSpec::Synthetic(read_json::<SyntheticScene>(scene).map_err(Failure::Runtime)?)
                }
                ProviderArg::SyntheticScene(_) => {
                    return usage("with --manifest use `--provider synthetic` (each entry names its scene)")
                }
                ProviderArg::Subprocess(command) => subprocess(command, &entry.image),
            };
            jobs.push(Job {
                name: stem(&entry.image),
                image: entry.image,
                present: entry.classes_present,
                provider: spec,
            });
        }
        let beside = dir.join("classes.txt");
        (jobs, beside.exists().then_some(beside))
    } else {
        let image = args.image.clone().expect("clap requires --image without --manifest");
        let (spec, present) = match provider {
            ProviderArg::SyntheticPerItem => return usage("a single image needs `--provider synthetic:<scene.json>`"),
            ProviderArg::SyntheticScene(path) => {
                let scene: SyntheticScene = read_json(path).map_err(Failure::Runtime)?;
                let present = if args.present.is_empty() {
                    (1..=scene.n_classes()).map(|k| format!("class{k}")).collect()
                } else {
                    args.present.clone()
                };
                (ProviderSpec::Synthetic(scene), present)
            }
            ProviderArg::Subprocess(command) => {
                if args.present.is_empty() {
                    return usage("--present is required with a subprocess provider");
                }
                (subprocess(command, &image), args.present.clone())
            }
        };
        let job = Job {
            name: stem(&image),
            image,
            present,
            provider: spec,
        };
        (vec![job], None)
    };
    if jobs.is_empty() {
        return usage("the manifest lists no images");
    }
    let classes = match args.classes.as_deref().or(default_classes.as_deref()) {
        Some(path) => load_classes(path)?,
        None => ClassList::new(jobs[0].present.clone()).map_err(|e| Failure::Usage(format!("--present: {e}")))?,
    };
    for job in &jobs {
        if let Some(name) = job.present.iter().find(|n| classes.label_of(n).is_none()) {
            return usage(format!("{}: class `{name}` is not in the class list", job.name));
        }
    }
    Ok((jobs, classes))
}

fn segment_one(job: &Job, config: &PipelineConfig, classes: &ClassList, out: &Path) -> ImageReport {
    let mut report = ImageReport {
        name: job.name.clone(),
        image: job.image.clone(),
        present: job.present.clone(),
        ..ImageReport::default()
    };
    if let Err(e) = try_segment(job, config, classes, out, &mut report) {
        report.error = Some(format!("{e:#}"));
    }
    report
}

fn try_segment(
    job: &Job,
    config: &PipelineConfig,
    classes: &ClassList,
    out: &Path,
    report: &mut ImageReport,
) -> anyhow::Result<()> {
    let image = read_ppm(&job.image).context("image")?;
    let t = Instant::now();
    let mut provider = job
        .provider
        .open(&job.present, config.layer, config.head)
        .context("provider")?;
    let grid = job.provider.grid();
    let salience = salience_dropout_run(&mut provider, grid, config.dropout_rounds).context("salience")?;
    drop(provider);
    report.timings_ms.salience = t.elapsed().as_secs_f64() * 1e3;
    report.grid = Some(grid);
    report.final_active_patches = Some(salience.final_active().len());

    let t = Instant::now();
    let result = refine_pipeline(&salience, &image, config).context("refine")?;
    report.timings_ms.refine = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    write_outputs(job, &image, &result, classes, out)?;
    report.timings_ms.write = t.elapsed().as_secs_f64() * 1e3;
    Ok(())
}

fn write_outputs(
    job: &Job,
    image: &RgbImage,
    result: &SegmentationResult,
    classes: &ClassList,
    out: &Path,
) -> anyhow::Result<()> {
    let global: Vec<u8> = job
        .present
        .iter()
        .map(|n| classes.label_of(n).expect("checked in plan"))
        .collect();
    let local = &result.labels;
    let labels: Vec<u8> = local
        .labels()
        .iter()
        .map(|&l| if l == 0 { 0 } else { global[l as usize - 1] })
        .collect();
    let raster = LabelRaster::new(local.width(), local.height(), labels).expect("same size");
    write_bytes(
        &out.join("rasters").join(format!("{}.pgm", job.name)),
        &encode_pgm(&raster),
    )?;

    for (k, name) in job.present.iter().enumerate() {
        let mask: Vec<u8> = local
            .mask_of(k as u8 + 1)
            .iter()
            .map(|&m| if m { 255 } else { 0 })
            .collect();
        let mask = LabelRaster::new(local.width(), local.height(), mask).expect("same size");
        write_bytes(
            &out.join("masks")
                .join(&job.name)
                .join(format!("{}.pgm", file_safe(name))),
            &encode_pgm(&mask),
        )?;
    }

    let soft = result.soft_masks();
    let tensor = SaltTensor::new(
        vec![soft.n_classes(), soft.height(), soft.width()],
        SaltData::F32(soft.values().iter().map(|&v| v as f32).collect()),
    )
    .map_err(|e| anyhow!("soft masks: {e}"))?;
    write_bytes(&out.join("soft").join(format!("{}.salt", job.name)), &tensor.encode())?;

    let overlay = overlay(image, &raster, classes.len());
    write_bytes(
        &out.join("overlays").join(format!("{}.ppm", job.name)),
        &encode_ppm(&overlay),
    )?;
    Ok(())
}

/// `name` with path separators and other awkward characters replaced.
fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Half-transparent class colours over the image; background untouched.
fn overlay(image: &RgbImage, labels: &LabelRaster, n_classes: usize) -> RgbImage {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let label = labels.get(x, y);
            if label == 0 {
                continue;
            }
            let colour = class_colour(label as usize - 1, n_classes);
            let px = image.pixel(x, y);
            let blended = std::array::from_fn(|c| ((px[c] as u16 + colour[c] as u16) / 2) as u8);
            out.put_pixel(x, y, blended);
        }
    }
    out
}

/// Evenly spaced fully saturated hues.
fn class_colour(class: usize, n_classes: usize) -> [u8; 3] {
    let h = 6.0 * class as f64 / n_classes.max(1) as f64;
    let f = h.fract();
    let (rise, fall) = ((255.0 * f) as u8, (255.0 * (1.0 - f)) as u8);
    match h as usize % 6 {
        0 => [255, rise, 0],
        1 => [fall, 255, 0],
        2 => [0, 255, rise],
        3 => [0, fall, 255],
        4 => [rise, 0, 255],
        _ => [255, 0, fall],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colours_are_distinct() {
        let colours: Vec<[u8; 3]> = (0..6).map(|k| class_colour(k, 6)).collect();
        assert_eq!(colours[0], [255, 0, 0]);
        assert_eq!(colours[2], [0, 255, 0]);
        for i in 0..6 {
            for j in i + 1..6 {
                assert_ne!(colours[i], colours[j]);
            }
        }
    }

    #[test]
    fn mask_file_names() {
        assert_eq!(file_safe("traffic light"), "traffic_light");
        assert_eq!(file_safe("a/b"), "a_b");
        assert_eq!(file_safe("class-1.x"), "class-1.x");
    }

    #[test]
    fn overlay_blends_foreground_only() {
        let mut image = RgbImage::new(2, 1);
        image.put_pixel(0, 0, [100, 100, 100]);
        image.put_pixel(1, 0, [100, 100, 100]);
        let labels = LabelRaster::new(2, 1, vec![0, 1]).unwrap();
        let out = overlay(&image, &labels, 1);
        assert_eq!(out.pixel(0, 0), [100, 100, 100]);
        assert_eq!(out.pixel(1, 0), [177, 50, 50]);
    }
}
