//! Pipeline hyperparameters.

use serde::{Deserialize, Serialize};

use crate::refine::{CrfParams, RefineError};

/// Everything one segmentation run needs besides the provider and image.
///
/// Defaults are the reference solution for a 12-layer, 12-head model:
/// layer 8, head 10, threshold 0.15, blur sigma 0.05, four dropout rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Cross-attention layer, 1-based.
    pub layer: u32,
    /// Attention head, 1-based.
    pub head: u32,
    /// Patch-grid threshold on min-max normalized salience, in `(0, 1)`.
    pub threshold: f64,
    /// Blur sigma as a fraction of the short image side.
    pub blur_sigma: f64,
    /// Salience dropout rounds; 1 means plain GradCAM.
    pub dropout_rounds: usize,
    pub blur: bool,
    pub crf: bool,
    pub crf_params: CrfParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            layer: 8,
            head: 10,
            threshold: 0.15,
            blur_sigma: 0.05,
            dropout_rounds: 4,
            blur: true,
            crf: true,
            crf_params: CrfParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.layer == 0 || self.head == 0 {
            return Err(RefineError::InvalidParam(format!(
                "layer and head are 1-based, got layer {} head {}",
                self.layer, self.head
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(RefineError::Threshold(self.threshold));
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma > 0.0) {
            return Err(RefineError::Sigma(self.blur_sigma));
        }
        if self.dropout_rounds == 0 {
            return Err(RefineError::InvalidParam("dropout_rounds must be >= 1".into()));
        }
        self.crf_params.validate()
    }
}
