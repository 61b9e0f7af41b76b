//! Scoring: confusion counts, per-class IoU and mIoU, raster I/O and the
//! synthetic benchmark.

mod netpbm;
mod synth;

pub use netpbm::{
    check_labels, decode_pgm, decode_ppm, encode_pgm, encode_ppm, load_label_raster, load_label_raster_checked,
    read_ppm, save_label_raster, write_ppm,
};
pub use synth::{
    synth_benchmark, write_benchmark, ManifestEntry, PaletteFile, SynthDataset, SynthItem, SynthParams, BACKGROUND,
};

use std::collections::HashSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::refine::LabelRaster;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<EvalError>,
    },
    #[error("unsupported format: expected binary {expected}, found {found:?}")]
    UnsupportedFormat { expected: &'static str, found: String },
    #[error("maxval {0} is not supported (only 255)")]
    MaxVal(usize),
    #[error("malformed netpbm data: {0}")]
    Format(String),
    #[error("label {label} at ({x}, {y}) exceeds the class count {max}")]
    LabelOutOfRange { label: u8, max: usize, x: usize, y: usize },
    #[error("raster sizes differ: ground truth {truth:?}, prediction {pred:?}")]
    SizeMismatch {
        truth: (usize, usize),
        pred: (usize, usize),
    },
    #[error("accumulators have different label counts ({0} vs {1})")]
    LabelCountMismatch(usize, usize),
    #[error("no scorable classes")]
    NoScorableClasses,
    #[error("invalid class list: {0}")]
    ClassList(String),
    #[error("invalid benchmark parameters: {0}")]
    Params(String),
    #[error("could not place {blobs} non-overlapping blobs after {attempts} attempts")]
    Placement { blobs: usize, attempts: usize },
}

/// Ordered class names; label `i + 1` is `names[i]`, label 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassList {
    names: Vec<String>,
}

impl ClassList {
    pub fn new(names: Vec<String>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(EvalError::ClassList("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(EvalError::ClassList(format!("duplicate class {name:?}")));
            }
        }
        if names.len() > u8::MAX as usize {
            return Err(EvalError::ClassList(format!("{} classes exceed 255", names.len())));
        }
        Ok(Self { names })
    }

    /// One name per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Label of a class name (1-based).
    pub fn label_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8 + 1)
    }
}

/// `(K+1) x (K+1)` pixel counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    n_labels: usize,
    ignore: Option<u8>,
    counts: Vec<u64>,
}

impl ConfusionAccumulator {
    /// Accumulator for background plus `n_classes` classes.
    pub fn new(n_classes: usize) -> Self {
        let n_labels = n_classes + 1;
        Self {
            n_labels,
            ignore: None,
            counts: vec![0; n_labels * n_labels],
        }
    }

    /// Ground-truth pixels carrying `label` are skipped.
    pub fn with_ignore(mut self, label: u8) -> Self {
        self.ignore = Some(label);
        self
    }

    pub fn n_classes(&self) -> usize {
        self.n_labels - 1
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_labels + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, truth: &LabelRaster, pred: &LabelRaster) -> Result<(), EvalError> {
        if (truth.width(), truth.height()) != (pred.width(), pred.height()) {
            return Err(EvalError::SizeMismatch {
                truth: (truth.width(), truth.height()),
                pred: (pred.width(), pred.height()),
            });
        }
        let k = self.n_classes();
        check_labels(pred, k)?;
        for (i, (&t, &p)) in truth.labels().iter().zip(pred.labels()).enumerate() {
            if Some(t) == self.ignore {
                continue;
            }
            if t as usize > k {
                return Err(EvalError::LabelOutOfRange {
                    label: t,
                    max: k,
                    x: i % truth.width(),
                    y: i / truth.width(),
                });
            }
            self.counts[t as usize * self.n_labels + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<(), EvalError> {
        if other.n_labels != self.n_labels {
            return Err(EvalError::LabelCountMismatch(self.n_labels, other.n_labels));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per label (index 0 is background); `None` where
    /// `TP + FP + FN = 0`.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.n_labels)
            .map(|c| {
                let tp = self.count(c, c);
                let fn_: u64 = (0..self.n_labels).filter(|p| *p != c).map(|p| self.count(c, p)).sum();
                let fp: u64 = (0..self.n_labels).filter(|t| *t != c).map(|t| self.count(t, c)).sum();
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over scorable labels, background included only on request.
    pub fn miou(&self, include_background: bool) -> Result<f64, EvalError> {
        let skip = if include_background { 0 } else { 1 };
        let scored: Vec<f64> = self.iou_per_class().into_iter().skip(skip).flatten().collect();
        if scored.is_empty() {
            return Err(EvalError::NoScorableClasses);
        }
        Ok(scored.iter().sum::<f64>() / scored.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(w: usize, labels: Vec<u8>) -> LabelRaster {
        let h = labels.len() / w;
        LabelRaster::new(w, h, labels).unwrap()
    }

    #[test]
    fn identical_prediction_scores_one() {
        let r = raster(3, vec![0, 1, 1, 2, 0, 2]);
        let mut acc = ConfusionAccumulator::new(2);
        acc.add(&r, &r).unwrap();
        assert_eq!(acc.miou(false).unwrap(), 1.0);
        assert_eq!(acc.total(), 6);
    }

    #[test]
    fn one_overlapping_pixel_gives_a_third() {
        // Count oracle: TP 1, FP 1, FN 1.
        let truth = raster(2, vec![1, 1, 0, 0]);
        let pred = raster(2, vec![1, 0, 1, 0]);
        let mut acc = ConfusionAccumulator::new(1);
        acc.add(&truth, &pred).unwrap();
        assert!((acc.iou_per_class()[1].unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((acc.miou(false).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let truth = raster(2, vec![1, 1, 0, 0]);
        let mut acc = ConfusionAccumulator::new(3);
        acc.add(&truth, &truth).unwrap();
        let iou = acc.iou_per_class();
        assert_eq!(iou[2], None);
        assert_eq!(iou[3], None);
        assert_eq!(acc.miou(false).unwrap(), 1.0);

        let bg = raster(2, vec![0; 4]);
        let mut acc = ConfusionAccumulator::new(2);
        acc.add(&bg, &bg).unwrap();
        assert!(matches!(acc.miou(false), Err(EvalError::NoScorableClasses)));
        assert_eq!(acc.miou(true).unwrap(), 1.0);
    }

    #[test]
    fn ignore_label_and_errors() {
        let truth = raster(2, vec![255, 1, 0, 0]);
        let pred = raster(2, vec![1, 1, 0, 0]);
        let mut acc = ConfusionAccumulator::new(1).with_ignore(255);
        acc.add(&truth, &pred).unwrap();
        assert_eq!(acc.total(), 3);
        assert_eq!(acc.miou(false).unwrap(), 1.0);
        let mut acc = ConfusionAccumulator::new(1);
        assert!(acc.add(&truth, &pred).is_err());
        assert!(acc.add(&raster(1, vec![0, 0]), &raster(2, vec![0, 0])).is_err());
        assert!(acc.merge(&ConfusionAccumulator::new(2)).is_err());
    }

    #[test]
    fn class_lists() {
        let c = ClassList::parse("cat\n\ndog\n").unwrap();
        assert_eq!(c.names(), &["cat", "dog"]);
        assert_eq!(c.label_of("dog"), Some(2));
        assert_eq!(ClassList::parse(&c.to_text()).unwrap(), c);
        assert!(ClassList::parse("cat\ncat\n").is_err());
    }

    fn pair() -> impl Strategy<Value = (usize, Vec<u8>, Vec<u8>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            (
                Just(w),
                prop::collection::vec(0u8..4, w * h),
                prop::collection::vec(0u8..4, w * h),
            )
        })
    }

    proptest! {
        #[test]
        fn iou_is_symmetric((w, a, b) in pair()) {
            let (ra, rb) = (raster(w, a), raster(w, b));
            let mut ab = ConfusionAccumulator::new(3);
            ab.add(&ra, &rb).unwrap();
            let mut ba = ConfusionAccumulator::new(3);
            ba.add(&rb, &ra).unwrap();
            prop_assert_eq!(ab.iou_per_class(), ba.iou_per_class());
        }

        #[test]
        fn accumulation_is_order_independent((w, a, b) in pair(), (w2, c, d) in pair()) {
            let (ra, rb, rc, rd) = (raster(w, a), raster(w, b), raster(w2, c), raster(w2, d));
            let mut one = ConfusionAccumulator::new(3);
            one.add(&ra, &rb).unwrap();
            one.add(&rc, &rd).unwrap();
            let mut two = ConfusionAccumulator::new(3);
            two.add(&rc, &rd).unwrap();
            let mut part = ConfusionAccumulator::new(3);
            part.add(&ra, &rb).unwrap();
            two.merge(&part).unwrap();
            prop_assert_eq!(one, two);
        }

        #[test]
        fn self_prediction_is_perfect((w, a, _b) in pair()) {
            let r = raster(w, a);
            let mut acc = ConfusionAccumulator::new(3);
            acc.add(&r, &r).unwrap();
            match acc.miou(false) {
                Ok(m) => prop_assert_eq!(m, 1.0),
                Err(_) => prop_assert!(r.labels().iter().all(|l| *l == 0)),
            }
        }
    }
}
