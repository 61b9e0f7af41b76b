//! Synthetic benchmark: scenes of flat-coloured rounded-rectangle objects
//! with pixel-accurate ground truth and matching synthetic-provider scenes.
//!
//! Objects are slightly rotated superellipses (`|u|^4 + |v|^4 <= 1`) that fill
//! most of their layout cell, so together they cover more than half of the
//! patch grid. They are drawn at pixel resolution, so their patch-grid
//! masks (one sample per patch, at the cell centre) have jagged outlines
//! that only pixel-level refinement can recover. Attention peaks sit off
//! centre along the major axis, so the far end of each object reads weak
//! salience until dropout removes the peak.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_pgm, encode_ppm, ClassList, EvalError};
use crate::image::RgbImage;
use crate::provider::{PlantedBlob, SyntheticScene};
use crate::refine::LabelRaster;

/// Placement attempts per object before giving up.
const MAX_ATTEMPTS: usize = 200;

/// Superellipse exponent of every object outline.
const SHAPE_EXPONENT: f64 = 4.0;

/// Background colour of every synthetic image.
pub const BACKGROUND: [u8; 3] = [48, 48, 48];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub seed: u64,
    pub n_images: usize,
    pub n_classes: usize,
    /// Patch grid side `P`.
    pub grid: usize,
    /// Square image side in pixels.
    pub size: usize,
    /// Attention noise level of the provider scenes.
    pub noise: f64,
    /// Attention decay rate of the provider scenes.
    pub decay: f64,
    /// Uniform per-channel pixel noise amplitude.
    pub pixel_noise: u8,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            n_images: 20,
            n_classes: 4,
            grid: 24,
            size: 96,
            noise: 0.1,
            decay: 0.3,
            pixel_noise: 4,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Params(m.into()));
        if self.n_classes == 0 || self.n_classes > u8::MAX as usize {
            return bad("n_classes must be in 1..=255");
        }
        if self.grid == 0 || self.size < self.grid {
            return bad("need grid >= 1 and size >= grid");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0 && self.decay.is_finite() && self.decay >= 0.0) {
            return bad("noise and decay must be finite and >= 0");
        }
        Ok(())
    }
}

/// One benchmark image.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub name: String,
    /// Present classes as 0-based indices into the dataset class list,
    /// ascending; the scene's class `j` is `classes_present[j]`.
    pub classes_present: Vec<usize>,
    pub scene: SyntheticScene,
    pub image: RgbImage,
    /// Ground truth in dataset labels (`class index + 1`, 0 background).
    pub truth: LabelRaster,
}

impl SynthItem {
    /// Map a raster labelled in scene order to dataset labels.
    pub fn to_global(&self, local: &LabelRaster) -> LabelRaster {
        let labels = local
            .labels()
            .iter()
            .map(|&l| match l {
                0 => 0,
                l => self.classes_present[l as usize - 1] as u8 + 1,
            })
            .collect();
        LabelRaster::new(local.width(), local.height(), labels).expect("same size")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub classes: ClassList,
    /// Colour of each class, in class-list order.
    pub palette: Vec<[u8; 3]>,
    pub items: Vec<SynthItem>,
}

/// Manifest record; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub raster: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    pub classes_present: Vec<String>,
}

/// Evenly spaced saturated hues.
fn palette(n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|i| {
            let h = i as f64 / n as f64 * 6.0;
            let (s, v) = (0.85, 0.92);
            let c = v * s;
            let x = c * (1.0 - (h % 2.0 - 1.0).abs());
            let (r, g, b) = match h as usize {
                0 => (c, x, 0.0),
                1 => (x, c, 0.0),
                2 => (0.0, c, x),
                3 => (0.0, x, c),
                4 => (x, 0.0, c),
                _ => (c, 0.0, x),
            };
            let m = v - c;
            [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
        })
        .collect()
}

/// Pixel rectangles `(x0, y0, x1, y1)` tiling the image for `m` objects.
fn layout(m: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, f64, f64)> {
    let s = size as f64;
    let h = s / 2.0;
    let vertical = rng.random_bool(0.5);
    let halves = if vertical {
        [(0.0, 0.0, h, s), (h, 0.0, s, s)]
    } else {
        [(0.0, 0.0, s, h), (0.0, h, s, s)]
    };
    let split = |(x0, y0, x1, y1): (f64, f64, f64, f64)| {
        if vertical {
            let ym = (y0 + y1) / 2.0;
            [(x0, y0, x1, ym), (x0, ym, x1, y1)]
        } else {
            let xm = (x0 + x1) / 2.0;
            [(x0, y0, xm, y1), (xm, y0, x1, y1)]
        }
    };
    match m {
        1 => vec![(0.0, 0.0, s, s)],
        2 => halves.to_vec(),
        3 => {
            let [a, b] = split(halves[1]);
            vec![halves[0], a, b]
        }
        _ => {
            let [a, b] = split(halves[0]);
            let [c, d] = split(halves[1]);
            vec![a, b, c, d]
        }
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u.abs().powf(SHAPE_EXPONENT) + v.abs().powf(SHAPE_EXPONENT) <= 1.0
    }

    fn fits(&self, (x0, y0, x1, y1): (f64, f64, f64, f64)) -> bool {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let n = SHAPE_EXPONENT;
        (0..256).all(|i| {
            let t = i as f64 / 256.0 * 2.0 * PI;
            let u = t.cos().signum() * t.cos().abs().powf(2.0 / n) * self.a;
            let v = t.sin().signum() * t.sin().abs().powf(2.0 / n) * self.b;
            let (x, y) = (self.cx + u * c - v * s, self.cy + u * s + v * c);
            x >= x0 + 1.0 && x <= x1 - 1.0 && y >= y0 + 1.0 && y <= y1 - 1.0
        })
    }

    /// Point `frac` of the way from the centre to one end of the major axis.
    fn along_major(&self, frac: f64, sign: f64) -> (f64, f64) {
        let (r, angle) = if self.a >= self.b {
            (self.a, self.theta)
        } else {
            (self.b, self.theta + PI / 2.0)
        };
        (
            self.cx + sign * frac * r * angle.cos(),
            self.cy + sign * frac * r * angle.sin(),
        )
    }
}

fn place(cell: (f64, f64, f64, f64), rng: &mut ChaCha8Rng) -> Result<Blob, EvalError> {
    let (x0, y0, x1, y1) = cell;
    let (w, h) = (x1 - x0, y1 - y0);
    for _ in 0..MAX_ATTEMPTS {
        let e = Blob {
            cx: (x0 + x1) / 2.0 + rng.random_range(-0.06..0.06) * w,
            cy: (y0 + y1) / 2.0 + rng.random_range(-0.06..0.06) * h,
            a: w / 2.0 * rng.random_range(0.8..0.92),
            b: h / 2.0 * rng.random_range(0.8..0.92),
            theta: rng.random_range(-0.12..0.12),
        };
        if e.fits(cell) {
            return Ok(e);
        }
    }
    Err(EvalError::Placement {
        blobs: 1,
        attempts: MAX_ATTEMPTS,
    })
}

/// Sample a pixel raster at every patch-cell centre.
pub(crate) fn patch_centres(grid: usize, size: usize) -> Vec<usize> {
    (0..grid)
        .map(|i| (i * size / grid + (i + 1) * size / grid) / 2)
        .collect()
}

fn generate_item(
    index: usize,
    params: &SynthParams,
    colours: &[[u8; 3]],
    rng: &mut ChaCha8Rng,
) -> Result<SynthItem, EvalError> {
    let (size, p) = (params.size, params.grid);
    let max_blobs = params.n_classes.min(4);
    let m = rng.random_range(1..=max_blobs);
    let mut present = sample(rng, params.n_classes, m).into_vec();
    present.sort_unstable();
    let cells = layout(m, size, rng);

    let mut labels = vec![0u8; size * size];
    let mut blobs_px = Vec::with_capacity(m);
    for (j, cell) in cells.iter().enumerate() {
        let e = place(*cell, rng)?;
        for y in 0..size {
            for x in 0..size {
                if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    labels[y * size + x] = j as u8 + 1;
                }
            }
        }
        blobs_px.push(e);
    }

    let centres = patch_centres(p, size);
    let mut blobs = Vec::with_capacity(m);
    for (j, e) in blobs_px.iter().enumerate() {
        let mask: Vec<Vec<bool>> = centres
            .iter()
            .map(|&y| centres.iter().map(|&x| labels[y * size + x] == j as u8 + 1).collect())
            .collect();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (tx, ty) = e.along_major(0.55, sign);
        let peak = (0..p * p)
            .filter(|i| mask[i / p][i % p])
            .min_by(|&i, &k| {
                let d = |i: usize| {
                    let (cy, cx) = (centres[i / p] as f64 + 0.5, centres[i % p] as f64 + 0.5);
                    (cx - tx).powi(2) + (cy - ty).powi(2)
                };
                d(i).total_cmp(&d(k))
            })
            .ok_or(EvalError::Placement {
                blobs: m,
                attempts: MAX_ATTEMPTS,
            })?;
        blobs.push(PlantedBlob {
            mask,
            peak: (peak / p, peak % p),
        });
    }

    let noise = params.pixel_noise as i16;
    let mut image = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let base = match labels[y * size + x] {
                0 => BACKGROUND,
                l => colours[present[l as usize - 1]],
            };
            let rgb = base.map(|c| (c as i16 + rng.random_range(-noise..=noise)).clamp(0, 255) as u8);
            image.put_pixel(x, y, rgb);
        }
    }
    let truth = labels
        .iter()
        .map(|&l| if l == 0 { 0 } else { present[l as usize - 1] as u8 + 1 })
        .collect();
    Ok(SynthItem {
        name: format!("scene_{index:03}"),
        classes_present: present,
        scene: SyntheticScene {
            grid: p,
            blobs,
            decay: params.decay,
            noise: params.noise,
            seed: rng.random(),
            landscape: None,
        },
        image,
        truth: LabelRaster::new(size, size, truth).expect("raster size"),
    })
}

/// Generate a deterministic benchmark from `params.seed`.
pub fn synth_benchmark(params: &SynthParams) -> Result<SynthDataset, EvalError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let colours = palette(params.n_classes);
    let classes = ClassList::new((1..=params.n_classes).map(|i| format!("class{i}")).collect())?;
    let items = (0..params.n_images)
        .map(|i| generate_item(i, params, &colours, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthDataset {
        classes,
        palette: colours,
        items,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    std::fs::write(path, bytes).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Colours of a synthetic dataset, for oracles that score by colour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteFile {
    pub background: [u8; 3],
    pub classes: Vec<(String, [u8; 3])>,
}

/// Write `images/`, `rasters/`, `scenes/`, `classes.txt`, `palette.json`
/// and `manifest.json` under `dir`.
pub fn write_benchmark(dir: &Path, dataset: &SynthDataset) -> Result<Vec<ManifestEntry>, EvalError> {
    for sub in ["images", "rasters", "scenes"] {
        let path = dir.join(sub);
        std::fs::create_dir_all(&path).map_err(|source| EvalError::Io { path, source })?;
    }
    let mut manifest = Vec::with_capacity(dataset.items.len());
    for item in &dataset.items {
        let entry = ManifestEntry {
            image: Path::new("images").join(format!("{}.ppm", item.name)),
            raster: Path::new("rasters").join(format!("{}.pgm", item.name)),
            scene: Some(Path::new("scenes").join(format!("{}.json", item.name))),
            classes_present: item
                .classes_present
                .iter()
                .map(|&k| dataset.classes.names()[k].clone())
                .collect(),
        };
        write_file(&dir.join(&entry.image), &encode_ppm(&item.image))?;
        write_file(&dir.join(&entry.raster), &encode_pgm(&item.truth))?;
        let scene = serde_json::to_vec_pretty(&item.scene).expect("scene serializes");
        write_file(&dir.join(entry.scene.as_ref().expect("set above")), &scene)?;
        manifest.push(entry);
    }
    write_file(&dir.join("classes.txt"), dataset.classes.to_text().as_bytes())?;
    let palette = PaletteFile {
        background: BACKGROUND,
        classes: dataset
            .classes
            .names()
            .iter()
            .cloned()
            .zip(dataset.palette.iter().copied())
            .collect(),
    };
    write_file(
        &dir.join("palette.json"),
        &serde_json::to_vec_pretty(&palette).expect("palette serializes"),
    )?;
    write_file(
        &dir.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}
