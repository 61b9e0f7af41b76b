//! From accumulated patch salience to a per-pixel label raster:
//! normalize, threshold, upsample, blur, dense CRF, argmax.
//!
//! Label 0 is background throughout; class `k` (0-based in the salience
//! stacks) becomes label `k + 1`.

mod blur;
mod crf;

pub use blur::{gaussian_blur, gaussian_kernel_1d};
pub use crf::{densecrf_meanfield, densecrf_meanfield_with, CrfParams, CrfPath, MeanFieldState, Unaries};

use thiserror::Error;

use crate::config::PipelineConfig;
use crate::image::RgbImage;
use crate::salience::{AccumulatedSalience, AttentionStack, PatchStack};

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("pixel {pixel} is not a probability vector")]
    NotDistribution { pixel: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("blur sigma must be > 0, got {0}")]
    Sigma(f64),
    #[error("cannot upsample a {grid}x{grid} grid to {width}x{height}: target is smaller")]
    UpsampleTooSmall { grid: usize, width: usize, height: usize },
    #[error("{0} classes do not fit in an 8-bit label raster")]
    TooManyClasses(usize),
}

/// Per-class maps over pixels, values in `[0, 1]`, class-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMaskStack {
    n_classes: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SoftMaskStack {
    pub fn new(n_classes: usize, width: usize, height: usize, values: Vec<f64>) -> Result<Self, RefineError> {
        if values.len() != n_classes * width * height {
            return Err(RefineError::Shape(format!(
                "{} values for {n_classes} classes of {width}x{height}",
                values.len()
            )));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(RefineError::NonFinite {
                    what: "soft mask",
                    index,
                });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(RefineError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            n_classes,
            width,
            height,
            values,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class_map(&self, class: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[class * n..(class + 1) * n]
    }

    /// Per-class pixel masks of entries `>= cut`.
    pub fn binarize(&self, cut: f64) -> Vec<Vec<bool>> {
        (0..self.n_classes)
            .map(|k| self.class_map(k).iter().map(|v| *v >= cut).collect())
            .collect()
    }
}

/// Binary per-class masks on the patch grid, class-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchMasks {
    n_classes: usize,
    grid: usize,
    values: Vec<bool>,
}

impl PatchMasks {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn class_mask(&self, class: usize) -> &[bool] {
        let n = self.grid * self.grid;
        &self.values[class * n..(class + 1) * n]
    }
}

/// Per-pixel class index, row-major; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, RefineError> {
        if labels.len() != width * height {
            return Err(RefineError::Shape(format!(
                "{} labels for {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Pixel mask of one label.
    pub fn mask_of(&self, label: u8) -> Vec<bool> {
        self.labels.iter().map(|l| *l == label).collect()
    }
}

/// Per-class min-max normalization of a patch stack; a class map with zero
/// range becomes all zeros.
pub fn normalize_stack(stack: &PatchStack) -> AttentionStack {
    let (k, p) = stack.shape();
    let mut out = Vec::with_capacity(stack.values().len());
    for class in 0..k {
        let map = stack.class_map(class);
        let min = map.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let max = map.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let range = max - min;
        out.extend(map.iter().map(|&v| {
            if range > 0.0 {
                (((v as f64 - min) / range) as f32).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }));
    }
    AttentionStack::from_values(k, p, out).expect("normalized values are finite and >= 0")
}

/// Min-max normalize the accumulated salience per class.
pub fn normalize_salience(acc: &AccumulatedSalience) -> AttentionStack {
    normalize_stack(acc.aggregate())
}

/// Patch masks of entries `>= threshold`.
pub fn threshold_masks(soft: &AttentionStack, threshold: f64) -> Result<PatchMasks, RefineError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(RefineError::Threshold(threshold));
    }
    let (n_classes, grid) = soft.shape();
    Ok(PatchMasks {
        n_classes,
        grid,
        values: soft.values().iter().map(|&v| v as f64 >= threshold).collect(),
    })
}

/// Cell index of every pixel along one axis: cell `i` spans
/// `floor(i * n / p) .. floor((i + 1) * n / p)`.
fn cell_of(p: usize, n: usize) -> Vec<usize> {
    let mut cells = Vec::with_capacity(n);
    for i in 0..p {
        let (lo, hi) = (i * n / p, (i + 1) * n / p);
        cells.extend(std::iter::repeat_n(i, hi - lo));
    }
    cells
}

/// Replicate a `grid x grid` map onto `width x height` pixels.
pub fn upsample_nearest<T: Copy>(map: &[T], grid: usize, width: usize, height: usize) -> Result<Vec<T>, RefineError> {
    if map.len() != grid * grid {
        return Err(RefineError::Shape(format!(
            "{} values for a {grid}x{grid} grid",
            map.len()
        )));
    }
    if width < grid || height < grid {
        return Err(RefineError::UpsampleTooSmall { grid, width, height });
    }
    let cols = cell_of(grid, width);
    let rows = cell_of(grid, height);
    let mut out = Vec::with_capacity(width * height);
    for &r in &rows {
        for &c in &cols {
            out.push(map[r * grid + c]);
        }
    }
    Ok(out)
}

/// Negative-log potentials over background plus `K` classes.
///
/// Background reads `1 - max_k soft_k`; all `K + 1` probabilities are
/// clamped to `[eps, 1 - eps]` and renormalized per pixel.
pub fn build_unaries(soft: &SoftMaskStack, eps: f64) -> Result<Unaries, RefineError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(RefineError::InvalidParam(format!(
            "eps must lie in (0, 0.5), got {eps}"
        )));
    }
    let n = soft.width * soft.height;
    let labels = soft.n_classes + 1;
    let mut values = vec![0.0; n * labels];
    let mut probs = vec![0.0; labels];
    for px in 0..n {
        let mut max = 0.0f64;
        for k in 0..soft.n_classes {
            let s = soft.values[k * n + px];
            probs[k + 1] = s;
            max = max.max(s);
        }
        probs[0] = 1.0 - max;
        probs.iter_mut().for_each(|p| *p = p.clamp(eps, 1.0 - eps));
        let z: f64 = probs.iter().sum();
        for (u, p) in values[px * labels..(px + 1) * labels].iter_mut().zip(&probs) {
            *u = -(p / z).ln();
        }
    }
    Unaries::new(soft.width, soft.height, labels, values)
}

/// Per-pixel argmax; ties go to the lower label.
pub fn labels_from_q(q: &MeanFieldState) -> LabelRaster {
    let labels = q
        .values()
        .chunks_exact(q.n_labels())
        .map(|px| {
            let mut best = 0;
            for (l, v) in px.iter().enumerate().skip(1) {
                if *v > px[best] {
                    best = l;
                }
            }
            best as u8
        })
        .collect();
    LabelRaster::new(q.width(), q.height(), labels).expect("state shape")
}

/// Every stage of one refinement, kept for ablations and reports.
#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub normalized: AttentionStack,
    pub patch_masks: PatchMasks,
    /// Thresholded masks replicated to pixels, values 0 or 1.
    pub pixel_masks: SoftMaskStack,
    /// Blurred pixel masks, when blur is enabled.
    pub blurred: Option<SoftMaskStack>,
    pub unaries: Unaries,
    /// Final marginals; `softmax(-unary)` when the CRF is disabled.
    pub q: MeanFieldState,
    pub labels: LabelRaster,
}

impl SegmentationResult {
    /// The soft masks the unaries were built from.
    pub fn soft_masks(&self) -> &SoftMaskStack {
        self.blurred.as_ref().unwrap_or(&self.pixel_masks)
    }
}

/// Blurred copy of every class map.
pub fn blur_masks(masks: &SoftMaskStack, sigma_frac: f64) -> Result<SoftMaskStack, RefineError> {
    let mut values = Vec::with_capacity(masks.values.len());
    for k in 0..masks.n_classes {
        let blurred = gaussian_blur(masks.class_map(k), masks.width, masks.height, sigma_frac)?;
        values.extend(blurred.into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    SoftMaskStack::new(masks.n_classes, masks.width, masks.height, values)
}

/// Threshold the patch grid and replicate it to `width x height` pixels.
pub fn pixel_masks_from(patch_masks: &PatchMasks, width: usize, height: usize) -> Result<SoftMaskStack, RefineError> {
    let mut values = Vec::with_capacity(patch_masks.n_classes * width * height);
    for k in 0..patch_masks.n_classes {
        let up = upsample_nearest(patch_masks.class_mask(k), patch_masks.grid, width, height)?;
        values.extend(up.into_iter().map(|b| b as u8 as f64));
    }
    SoftMaskStack::new(patch_masks.n_classes, width, height, values)
}

/// normalize → threshold → upsample → blur → unaries → CRF → labels.
pub fn refine_pipeline(
    acc: &AccumulatedSalience,
    image: &RgbImage,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult, RefineError> {
    refine_stack(acc.aggregate(), image, cfg)
}

/// [`refine_pipeline`] on any salience stack.
pub fn refine_stack(
    salience: &PatchStack,
    image: &RgbImage,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult, RefineError> {
    cfg.validate()?;
    if salience.n_classes() > u8::MAX as usize {
        return Err(RefineError::TooManyClasses(salience.n_classes()));
    }
    let (width, height) = (image.width(), image.height());
    let normalized = normalize_stack(salience);
    let patch_masks = threshold_masks(&normalized, cfg.threshold)?;
    let pixel_masks = pixel_masks_from(&patch_masks, width, height)?;
    let blurred = if cfg.blur {
        Some(blur_masks(&pixel_masks, cfg.blur_sigma)?)
    } else {
        None
    };
    let soft = blurred.as_ref().unwrap_or(&pixel_masks);
    let unaries = build_unaries(soft, cfg.crf_params.unary_clamp)?;
    let q = if cfg.crf {
        densecrf_meanfield(&unaries, image, &cfg.crf_params)?
    } else {
        MeanFieldState::from_unaries(&unaries)
    };
    let labels = labels_from_q(&q);
    Ok(SegmentationResult {
        normalized,
        patch_masks,
        pixel_masks,
        blurred,
        unaries,
        q,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::salience::{ActivePatchSet, DropoutRound, GradCamStack};
    use proptest::prelude::*;

    fn stack(k: usize, p: usize, v: Vec<f32>) -> PatchStack {
        PatchStack::new(k, p, v).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_stack(&stack(1, 2, vec![0.0, 4.0, 1.0, 2.0]));
        assert_eq!(n.values(), &[0.0, 1.0, 0.25, 0.5]);
        let n = normalize_stack(&stack(2, 1, vec![3.0, 7.0]));
        assert_eq!(n.values(), &[0.0, 0.0]);
        // [2, 6, 10] plus a padding entry at the max.
        let n = normalize_stack(&stack(1, 2, vec![2.0, 6.0, 10.0, 10.0]));
        assert_eq!(n.values(), &[0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let soft = AttentionStack::from_values(1, 2, vec![0.1, 0.15, 0.2, 0.0]).unwrap();
        let m = threshold_masks(&soft, 0.15).unwrap();
        assert_eq!(m.class_mask(0), &[false, true, true, false]);
        assert!(threshold_masks(&soft, 0.0).is_err());
        assert!(threshold_masks(&soft, 1.0).is_err());
        let m = threshold_masks(&soft, 0.5).unwrap();
        assert!(m.class_mask(0).iter().all(|b| !b));
    }

    #[test]
    fn upsampling_cells() {
        let up = upsample_nearest(&[1, 2, 3, 4], 2, 4, 4).unwrap();
        assert_eq!(up, vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
        assert_eq!(upsample_nearest(&[1, 2, 3, 4], 2, 2, 2).unwrap(), vec![1, 2, 3, 4]);
        let up = upsample_nearest(&[1, 2, 3, 4], 2, 3, 3).unwrap();
        assert_eq!(up, vec![1, 2, 2, 3, 4, 4, 3, 4, 4]);
        assert!(matches!(
            upsample_nearest(&[1, 2, 3, 4], 2, 1, 3),
            Err(RefineError::UpsampleTooSmall { .. })
        ));
    }

    #[test]
    fn unary_examples() {
        let soft = SoftMaskStack::new(2, 1, 1, vec![0.6, 0.2]).unwrap();
        let u = build_unaries(&soft, 0.01).unwrap();
        let p: Vec<f64> = u.values().iter().map(|v| (-v).exp()).collect();
        for (got, want) in p.iter().zip([0.4 / 1.2, 0.6 / 1.2, 0.2 / 1.2]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((p[1] - 0.5).abs() < 1e-3 && (p[2] - 0.1667).abs() < 1e-3 && (p[0] - 0.3333).abs() < 1e-3);

        let zero = SoftMaskStack::new(2, 1, 1, vec![0.0, 0.0]).unwrap();
        let u = build_unaries(&zero, 1e-3).unwrap();
        assert!(u.values()[0] < u.values()[1] && u.values()[0] < u.values()[2]);

        let one = SoftMaskStack::new(3, 1, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let u = build_unaries(&one, 1e-3).unwrap();
        let min = (0..4).min_by(|a, b| u.values()[*a].total_cmp(&u.values()[*b])).unwrap();
        assert_eq!(min, 2);
    }

    #[test]
    fn argmax_examples() {
        let q = MeanFieldState::new(3, 1, 3, vec![0.2, 0.5, 0.3, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(labels_from_q(&q).labels(), &[1, 0, 2]);
    }

    fn accumulated(values: Vec<f32>, k: usize, p: usize) -> AccumulatedSalience {
        let round = DropoutRound {
            active: ActivePatchSet::full(p),
            salience: GradCamStack::new(stack(k, p, values)).unwrap(),
        };
        AccumulatedSalience::from_rounds(vec![round], ActivePatchSet::full(p))
    }

    #[test]
    fn zero_salience_is_all_background() {
        let acc = accumulated(vec![0.0; 2 * 16], 2, 4);
        let img = RgbImage::new(8, 8);
        let r = refine_pipeline(&acc, &img, &PipelineConfig::default()).unwrap();
        assert!(r.labels.labels().iter().all(|l| *l == 0));
    }

    #[test]
    fn refinement_off_reproduces_upsampled_masks() {
        let values = vec![
            0.0, 0.9, 0.0, 0.0, //
            0.0, 0.9, 0.9, 0.0, //
            0.5, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.1, //
        ];
        let mut both = values.clone();
        both.extend(values.iter().map(|v| if *v == 0.5 { 0.9 } else { 0.0 }));
        let acc = accumulated(both, 2, 4);
        let cfg = PipelineConfig {
            blur: false,
            crf: false,
            ..Default::default()
        };
        let img = RgbImage::new(6, 6);
        let r = refine_pipeline(&acc, &img, &cfg).unwrap();
        let up0 = upsample_nearest(r.patch_masks.class_mask(0), 4, 6, 6).unwrap();
        let up1 = upsample_nearest(r.patch_masks.class_mask(1), 4, 6, 6).unwrap();
        for i in 0..36 {
            let want = if up0[i] {
                1
            } else if up1[i] {
                2
            } else {
                0
            };
            assert_eq!(r.labels.labels()[i], want, "pixel {i}");
            assert_eq!(r.pixel_masks.class_map(0)[i], up0[i] as u8 as f64);
        }
        assert!(r.blurred.is_none());
    }

    #[test]
    fn noiseless_planted_blob_is_recovered() {
        // A blob aligned to patch cells on a flat two-colour image.
        let p = 6;
        let (w, h) = (24, 24);
        let planted: Vec<bool> = (0..p * p)
            .map(|i| (1..4).contains(&(i / p)) && (2..5).contains(&(i % p)))
            .collect();
        let acc = accumulated(planted.iter().map(|b| *b as u8 as f32).collect(), 1, p);
        let truth = upsample_nearest(&planted, p, w, h).unwrap();
        let mut img = RgbImage::new(w, h);
        for (i, on) in truth.iter().enumerate() {
            img.put_pixel(i % w, i / w, if *on { [200, 40, 40] } else { [30, 30, 30] });
        }
        let r = refine_pipeline(&acc, &img, &PipelineConfig::default()).unwrap();
        let got: Vec<bool> = r.labels.labels().iter().map(|l| *l == 1).collect();
        assert_eq!(got, truth);
    }

    proptest! {
        #[test]
        fn raising_the_threshold_never_adds(values in prop::collection::vec(0.0f32..=1.0, 9), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let soft = AttentionStack::from_values(1, 3, values).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let m_lo = threshold_masks(&soft, lo).unwrap();
            let m_hi = threshold_masks(&soft, hi).unwrap();
            for (h, l) in m_hi.class_mask(0).iter().zip(m_lo.class_mask(0)) {
                prop_assert!(!h || *l);
            }
        }

        #[test]
        fn normalized_maps_span_unit_range(values in prop::collection::vec(0.0f32..50.0, 16)) {
            let n = normalize_stack(&stack(1, 4, values.clone()));
            prop_assert!(n.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let distinct = values.iter().any(|v| *v != values[0]);
            if distinct {
                prop_assert!(n.values().contains(&1.0) && n.values().contains(&0.0));
            }
        }
    }
}
