//! Evaluators: the real one (pipeline plus oracle over a validation set)
//! and an analytic planted landscape for checking the search itself.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::Arc;

use super::reward::{black_probabilities, reward_image_with_black, RewardReport, SimilarityOracle};
use super::search::{ConfigEvaluator, Scored};
use super::space::SearchPoint;
use super::TunerError;
use crate::config::PipelineConfig;
use crate::evalkit::{ClassList, SynthItem};
use crate::image::RgbImage;
use crate::provider::ProviderSpec;
use crate::refine::{refine_stack, SegmentationResult};
use crate::salience::{salience_dropout_run, GradCamStack};

/// One weakly labelled validation image.
#[derive(Clone, Debug)]
pub struct ValidationItem {
    pub name: String,
    pub image: RgbImage,
    /// Names of the classes present, in provider class order.
    pub classes: Vec<String>,
    pub provider: ProviderSpec,
}

impl ValidationItem {
    /// A synthetic benchmark image with its own scene as provider.
    pub fn from_synth(item: &SynthItem, classes: &ClassList) -> Self {
        Self {
            name: item.name.clone(),
            image: item.image.clone(),
            classes: item
                .classes_present
                .iter()
                .map(|&c| classes.names()[c].clone())
                .collect(),
            provider: ProviderSpec::Synthetic(item.scene.clone()),
        }
    }
}

/// Scores configurations by running the pipeline on every validation item
/// and summing [`reward_image`](super::reward_image).
///
/// Masks come from the last enabled stage of the configuration: CRF labels
/// when the CRF is on, otherwise blurred masks cut at 0.5 when blur is on,
/// otherwise the thresholded masks replicated to pixels. Oracle failures
/// abort the evaluation; anything else failing on one image scores that
/// image 0 and is reported.
///
/// Black-image probabilities are computed once per item, and salience
/// once per item, layer, head and round count.
pub struct DatasetEvaluator<O> {
    items: Arc<[ValidationItem]>,
    oracle: O,
    black: HashMap<usize, Vec<f64>>,
    salience: HashMap<(usize, u32, u32, usize), GradCamStack>,
}

impl<O: SimilarityOracle> DatasetEvaluator<O> {
    pub fn new(items: impl Into<Arc<[ValidationItem]>>, oracle: O) -> Self {
        Self {
            items: items.into(),
            oracle,
            black: HashMap::new(),
            salience: HashMap::new(),
        }
    }

    pub fn items(&self) -> &[ValidationItem] {
        &self.items
    }

    pub fn into_oracle(self) -> O {
        self.oracle
    }

    pub fn report(&mut self, config: &PipelineConfig) -> Result<RewardReport, TunerError> {
        let mut per_image = Vec::with_capacity(self.items.len());
        let mut failures = Vec::new();
        for index in 0..self.items.len() {
            match self.image_reward(index, config)? {
                Ok(r) => per_image.push(r),
                Err(message) => {
                    let name = self.items[index].name.clone();
                    log::warn!("{name}: scored 0 ({message})");
                    per_image.push(0);
                    failures.push((name, message));
                }
            }
        }
        Ok(RewardReport {
            config: config.clone(),
            total: per_image.iter().map(|r| *r as u64).sum(),
            per_image,
            failures,
        })
    }

    /// Outer error: the oracle failed. Inner error: this image failed.
    fn image_reward(&mut self, index: usize, config: &PipelineConfig) -> Result<Result<u32, String>, TunerError> {
        let items = Arc::clone(&self.items);
        let item = &items[index];
        let result = match self.segment(index, item, config) {
            Ok(r) => r,
            Err(e) => return Ok(Err(e.to_string())),
        };
        let masks = reward_masks(&result, config);
        if !self.black.contains_key(&index) {
            let black = black_probabilities(&mut self.oracle, item.image.width(), item.image.height(), &item.classes)?;
            self.black.insert(index, black);
        }
        let reward = reward_image_with_black(
            &masks,
            &item.image,
            &item.classes,
            &mut self.oracle,
            &self.black[&index],
        );
        match reward {
            Ok(r) => Ok(Ok(r)),
            Err(e @ (TunerError::MaskCount { .. } | TunerError::MaskSize { .. })) => Ok(Err(e.to_string())),
            Err(e) => Err(e),
        }
    }

    fn segment(
        &mut self,
        index: usize,
        item: &ValidationItem,
        config: &PipelineConfig,
    ) -> Result<SegmentationResult, TunerError> {
        let key = (index, config.layer, config.head, config.dropout_rounds);
        if let Entry::Vacant(slot) = self.salience.entry(key) {
            let mut provider = item
                .provider
                .open(&item.classes, config.layer, config.head)
                .map_err(|e| TunerError::Evaluation(e.to_string()))?;
            let acc = salience_dropout_run(&mut provider, item.provider.grid(), config.dropout_rounds)?;
            slot.insert(acc.aggregate().clone());
        }
        Ok(refine_stack(&self.salience[&key], &item.image, config)?)
    }
}

impl<O: SimilarityOracle> ConfigEvaluator for DatasetEvaluator<O> {
    fn evaluate(&mut self, config: &PipelineConfig) -> Result<Scored, TunerError> {
        let report = self.report(config)?;
        Ok(Scored {
            total: report.total as f64,
            per_image: report.per_image,
        })
    }
}

fn reward_masks(result: &SegmentationResult, config: &PipelineConfig) -> Vec<Vec<bool>> {
    if config.crf {
        (0..result.pixel_masks.n_classes())
            .map(|k| result.labels.mask_of(k as u8 + 1))
            .collect()
    } else {
        result.soft_masks().binarize(0.5)
    }
}

/// Analytic reward surface `exp(-sum_i ((x_i - peak_i) / width_i)^2)` over
/// (layer, head, threshold, blur sigma): strictly largest at `peak` and
/// falling off smoothly.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedLandscape {
    pub peak: SearchPoint,
    /// Falloff widths for layer, head, threshold and blur sigma.
    pub widths: [f64; 4],
}

impl PlantedLandscape {
    /// Peak at layer 8, head 10, threshold 0.15, sigma 0.05.
    pub fn reference() -> Self {
        Self {
            peak: SearchPoint::of(&PipelineConfig::default()),
            widths: [2.5, 2.5, 0.12, 0.03],
        }
    }

    pub fn value(&self, p: &SearchPoint) -> f64 {
        let d = [
            (p.layer as f64 - self.peak.layer as f64) / self.widths[0],
            (p.head as f64 - self.peak.head as f64) / self.widths[1],
            (p.threshold - self.peak.threshold) / self.widths[2],
            (p.blur_sigma - self.peak.blur_sigma) / self.widths[3],
        ];
        (-d.iter().map(|x| x * x).sum::<f64>()).exp()
    }
}

impl ConfigEvaluator for PlantedLandscape {
    fn evaluate(&mut self, config: &PipelineConfig) -> Result<Scored, TunerError> {
        Ok(Scored {
            total: self.value(&SearchPoint::of(config)),
            per_image: Vec::new(),
        })
    }
}
