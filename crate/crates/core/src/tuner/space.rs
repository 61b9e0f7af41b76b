//! Discrete hyperparameter grids.

use serde::{Deserialize, Serialize};

use super::TunerError;
use crate::config::PipelineConfig;

/// Values `start + n * step` for every `n >= 0` with value `<= end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

/// Slack for accumulated rounding when comparing against `end`.
const END_SLACK: f64 = 1e-9;

impl Axis {
    pub const fn new(start: f64, end: f64, step: f64) -> Self {
        Self { start, end, step }
    }

    /// A one-value axis.
    pub const fn fixed(value: f64) -> Self {
        Self {
            start: value,
            end: value,
            step: 1.0,
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), TunerError> {
        if !(self.start.is_finite() && self.end.is_finite() && self.step.is_finite()) {
            return Err(TunerError::Space(format!("{name}: values must be finite")));
        }
        if self.step <= 0.0 {
            return Err(TunerError::Space(format!(
                "{name}: step must be > 0, got {}",
                self.step
            )));
        }
        if self.end < self.start {
            return Err(TunerError::Space(format!(
                "{name}: end {} is below start {}",
                self.end, self.start
            )));
        }
        Ok(())
    }

    /// Grid values, each rounded to 1e-9 so `0.05 + 0.1` reads `0.15`.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut n = 0usize;
        loop {
            let v = self.start + n as f64 * self.step;
            if v > self.end + END_SLACK {
                break;
            }
            out.push((v * 1e9).round() / 1e9);
            n += 1;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.values().is_empty()
    }
}

/// One grid point: the four tuned hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub layer: u32,
    pub head: u32,
    pub threshold: f64,
    pub blur_sigma: f64,
}

impl SearchPoint {
    pub fn of(config: &PipelineConfig) -> Self {
        Self {
            layer: config.layer,
            head: config.head,
            threshold: config.threshold,
            blur_sigma: config.blur_sigma,
        }
    }

    /// `base` with this point's four values.
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            layer: self.layer,
            head: self.head,
            threshold: self.threshold,
            blur_sigma: self.blur_sigma,
            ..base.clone()
        }
    }
}

/// Axes for layer, head, threshold and blur sigma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub layer: Axis,
    pub head: Axis,
    pub threshold: Axis,
    pub blur_sigma: Axis,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::reference()
    }
}

impl SearchSpace {
    /// The reference grid for a 12-layer, 12-head model: layers and heads
    /// 1–12, threshold 0.05–0.5 in steps of 0.1 (so 0.05 … 0.45), blur
    /// sigma 0.01–0.11 in steps of 0.02.
    pub fn reference() -> Self {
        Self {
            layer: Axis::new(1.0, 12.0, 1.0),
            head: Axis::new(1.0, 12.0, 1.0),
            threshold: Axis::new(0.05, 0.5, 0.1),
            blur_sigma: Axis::new(0.01, 0.11, 0.02),
        }
    }

    /// The single point `p`.
    pub fn singleton(p: &SearchPoint) -> Self {
        Self {
            layer: Axis::fixed(p.layer as f64),
            head: Axis::fixed(p.head as f64),
            threshold: Axis::fixed(p.threshold),
            blur_sigma: Axis::fixed(p.blur_sigma),
        }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        for (name, axis) in self.axes() {
            axis.validate(name)?;
        }
        for (name, axis) in [("layer", &self.layer), ("head", &self.head)] {
            if axis
                .values()
                .iter()
                .any(|v| v.fract() != 0.0 || *v < 1.0 || *v > u32::MAX as f64)
            {
                return Err(TunerError::Space(format!("{name}: values must be whole numbers >= 1")));
            }
        }
        for t in self.threshold.values() {
            if !(t > 0.0 && t < 1.0) {
                return Err(TunerError::Space(format!("threshold {t} is outside (0, 1)")));
            }
        }
        if self.blur_sigma.values().iter().any(|s| *s <= 0.0) {
            return Err(TunerError::Space("blur sigma values must be > 0".into()));
        }
        Ok(())
    }

    fn axes(&self) -> [(&'static str, &Axis); 4] {
        [
            ("layer", &self.layer),
            ("head", &self.head),
            ("threshold", &self.threshold),
            ("blur_sigma", &self.blur_sigma),
        ]
    }

    pub fn size(&self) -> usize {
        self.axes().iter().map(|(_, a)| a.len()).product()
    }

    /// Every grid point, layer-major then head, threshold, sigma.
    pub fn points(&self) -> Vec<SearchPoint> {
        self.points_for_layers(&self.layer.values())
    }

    fn points_for_layers(&self, layers: &[f64]) -> Vec<SearchPoint> {
        let (heads, thresholds, sigmas) = (self.head.values(), self.threshold.values(), self.blur_sigma.values());
        let mut out = Vec::with_capacity(layers.len() * heads.len() * thresholds.len() * sigmas.len());
        for &l in layers {
            for &h in &heads {
                for &t in &thresholds {
                    for &s in &sigmas {
                        out.push(SearchPoint {
                            layer: l as u32,
                            head: h as u32,
                            threshold: t,
                            blur_sigma: s,
                        });
                    }
                }
            }
        }
        out
    }

    /// Split the grid into `groups` blocks of contiguous layers (sizes
    /// differ by at most one, larger blocks first).
    pub fn partition(&self, groups: usize) -> Result<Vec<Vec<SearchPoint>>, TunerError> {
        let layers = self.layer.values();
        if groups == 0 || groups > layers.len() {
            return Err(TunerError::EmptyPartition {
                groups,
                layers: layers.len(),
            });
        }
        let (base, extra) = (layers.len() / groups, layers.len() % groups);
        let mut start = 0;
        Ok((0..groups)
            .map(|g| {
                let len = base + usize::from(g < extra);
                let block = self.points_for_layers(&layers[start..start + len]);
                start += len;
                block
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_axes() {
        let s = SearchSpace::reference();
        assert_eq!(s.threshold.values(), vec![0.05, 0.15, 0.25, 0.35, 0.45]);
        assert_eq!(s.blur_sigma.values(), vec![0.01, 0.03, 0.05, 0.07, 0.09, 0.11]);
        assert_eq!(s.layer.len(), 12);
        assert_eq!(s.size(), 12 * 12 * 5 * 6);
        assert!(s.validate().is_ok());
        let solution = SearchPoint::of(&PipelineConfig::default());
        assert!(s.points().contains(&solution));
    }

    #[test]
    fn partition_is_contiguous_by_layer() {
        let s = SearchSpace::reference();
        let groups = s.partition(3).unwrap();
        let layers: Vec<Vec<u32>> = groups
            .iter()
            .map(|g| {
                let mut l: Vec<u32> = g.iter().map(|p| p.layer).collect();
                l.dedup();
                l
            })
            .collect();
        assert_eq!(layers, vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8], vec![9, 10, 11, 12]]);
        let mut five = SearchSpace::reference();
        five.layer = Axis::new(1.0, 5.0, 1.0);
        let sizes: Vec<usize> = five.partition(3).unwrap().iter().map(|g| g.len() / 360).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert!(matches!(s.partition(13), Err(TunerError::EmptyPartition { .. })));
        assert!(s.partition(0).is_err());
    }

    #[test]
    fn invalid_spaces() {
        let mut s = SearchSpace::reference();
        s.head.step = 0.0;
        assert!(s.validate().is_err());
        let mut s = SearchSpace::reference();
        s.layer = Axis::new(0.5, 3.0, 1.0);
        assert!(s.validate().is_err());
        let mut s = SearchSpace::reference();
        s.threshold = Axis::new(0.5, 0.1, 0.1);
        assert!(s.validate().is_err());
        let json = r#"{"layer":{"start":1,"end":2,"step":1},"head":{"start":1,"end":1,"step":1},
            "threshold":{"start":0.15,"end":0.15,"step":1},"blur_sigma":{"start":0.05,"end":0.05,"step":1}}"#;
        let s: SearchSpace = serde_json::from_str(json).unwrap();
        assert_eq!(s.size(), 2);
    }

    proptest! {
        #[test]
        fn axis_values_stay_in_range(start in -5.0f64..5.0, len in 0.0f64..10.0, step in 0.01f64..3.0) {
            let axis = Axis::new(start, start + len, step);
            let v = axis.values();
            prop_assert!(!v.is_empty());
            prop_assert!((v[0] - start).abs() < 1e-9);
            prop_assert!(v.iter().all(|x| *x <= start + len + 1e-9));
            prop_assert!(v.windows(2).all(|w| w[1] > w[0]));
            // One more step would overshoot.
            prop_assert!(start + v.len() as f64 * step > start + len - 1e-9);
        }
    }
}
