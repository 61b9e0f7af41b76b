//! Similarity oracles, class probabilities and the per-image reward.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::TunerError;
use crate::config::PipelineConfig;
use crate::evalkit::PaletteFile;
use crate::image::{resize_mask_nearest, RgbImage};
use crate::provider::protocol::{encode_image, Reply, Request};
use crate::provider::{JsonLineProcess, ProviderError};

/// Scores an image against class names; higher means more similar.
pub trait SimilarityOracle {
    /// Square side the oracle expects; inputs are resized to it.
    fn input_size(&self) -> Option<usize> {
        None
    }

    /// One raw score per entry of `classes`, in order.
    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, TunerError>;
}

impl<O: SimilarityOracle + ?Sized> SimilarityOracle for &mut O {
    fn input_size(&self) -> Option<usize> {
        (**self).input_size()
    }

    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, TunerError> {
        (**self).score(image, classes)
    }
}

impl<O: SimilarityOracle + ?Sized> SimilarityOracle for Box<O> {
    fn input_size(&self) -> Option<usize> {
        (**self).input_size()
    }

    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, TunerError> {
        (**self).score(image, classes)
    }
}

/// Oracle from a closure returning one score per class.
pub struct FnOracle<F>(pub F);

impl<F: FnMut(&RgbImage, &[String]) -> Vec<f64>> SimilarityOracle for FnOracle<F> {
    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, TunerError> {
        Ok((self.0)(image, classes))
    }
}

/// Synthetic oracle for benchmark images whose classes have known colours.
///
/// The score of class `c` is `scale` times the fraction of non-black pixels
/// within `tolerance` (per channel) of the colour of `c`; a black image
/// scores 0 for every class. Unknown class names score 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteOracle {
    pub palette: PaletteFile,
    pub scale: f64,
    pub tolerance: u8,
}

impl PaletteOracle {
    pub fn new(palette: PaletteFile) -> Self {
        Self {
            palette,
            scale: 10.0,
            tolerance: 24,
        }
    }
}

impl SimilarityOracle for PaletteOracle {
    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, TunerError> {
        let visible = image.as_bytes().chunks_exact(3).filter(|px| px.iter().any(|c| *c != 0));
        let mut counts = vec![0usize; classes.len()];
        let mut total = 0usize;
        let colours: Vec<Option<[u8; 3]>> = classes
            .iter()
            .map(|name| self.palette.classes.iter().find(|(n, _)| n == name).map(|(_, c)| *c))
            .collect();
        for px in visible {
            total += 1;
            for (count, colour) in counts.iter_mut().zip(&colours) {
                if let Some(c) = colour {
                    if px.iter().zip(c).all(|(a, b)| a.abs_diff(*b) <= self.tolerance) {
                        *count += 1;
                    }
                }
            }
        }
        Ok(counts
            .into_iter()
            .map(|c| {
                if total == 0 {
                    0.0
                } else {
                    self.scale * c as f64 / total as f64
                }
            })
            .collect())
    }
}

/// Oracle served by an external process over the line protocol
/// (`oracle_init` / `score`).
pub struct SubprocessOracle {
    process: JsonLineProcess,
    input_size: Option<usize>,
}

impl SubprocessOracle {
    pub fn start(command: &str, timeout: Duration) -> Result<Self, TunerError> {
        let mut process = JsonLineProcess::spawn(command, timeout)?;
        match process.request(&Request::OracleInit)? {
            Reply::OracleReady { input_size } => Ok(Self {
                process,
                input_size: input_size.map(|s| s as usize),
            }),
            other => Err(ProviderError::Protocol(format!("expected oracle_ready, got {other:?}")).into()),
        }
    }

    pub fn shutdown(self) -> Result<std::process::ExitStatus, TunerError> {
        Ok(self.process.shutdown()?)
    }
}

impl SimilarityOracle for SubprocessOracle {
    fn input_size(&self) -> Option<usize> {
        self.input_size
    }

    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, TunerError> {
        let request = Request::Score {
            image_b64: encode_image(image),
            classes: classes.to_vec(),
        };
        match self.process.request(&request)? {
            Reply::Scores { scores } => Ok(scores),
            other => Err(ProviderError::Protocol(format!("expected scores, got {other:?}")).into()),
        }
    }
}

/// Softmax of `scores`, stabilized by subtracting the maximum.
pub fn class_probabilities(scores: &[f64]) -> Result<Vec<f64>, TunerError> {
    if scores.is_empty() {
        return Err(TunerError::NoClasses);
    }
    if let Some((class, value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(TunerError::NonFiniteScore { class, value: *value });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

fn checked_scores(
    oracle: &mut dyn SimilarityOracle,
    image: &RgbImage,
    classes: &[String],
) -> Result<Vec<f64>, TunerError> {
    let scores = oracle.score(image, classes)?;
    if scores.len() != classes.len() {
        return Err(TunerError::ScoreCount {
            expected: classes.len(),
            found: scores.len(),
        });
    }
    Ok(scores)
}

/// Probability that `image` shows `classes[k]` rather than another
/// present class.
pub fn class_probability(
    oracle: &mut dyn SimilarityOracle,
    image: &RgbImage,
    classes: &[String],
    k: usize,
) -> Result<f64, TunerError> {
    if k >= classes.len() {
        return Err(TunerError::ClassIndex {
            index: k,
            count: classes.len(),
        });
    }
    Ok(class_probabilities(&checked_scores(oracle, image, classes)?)?[k])
}

/// The image the oracle sees for one mask: pixels resized bilinearly and
/// the mask by nearest neighbour to the oracle's square input (if it has
/// one), then everything outside the mask blacked out.
pub fn oracle_input(image: &RgbImage, mask: &[bool], size: Option<usize>) -> Result<RgbImage, TunerError> {
    let (w, h) = (image.width(), image.height());
    if mask.len() != w * h {
        return Err(TunerError::MaskSize {
            expected: w * h,
            found: mask.len(),
        });
    }
    Ok(match size {
        Some(s) if (s, s) != (w, h) => image
            .resize_bilinear(s, s)
            .masked(&resize_mask_nearest(mask, w, h, s, s)),
        _ => image.masked(mask),
    })
}

/// Class probabilities of an all-black image at the oracle's input size
/// (or `width x height` when it has none).
pub fn black_probabilities(
    oracle: &mut dyn SimilarityOracle,
    width: usize,
    height: usize,
    classes: &[String],
) -> Result<Vec<f64>, TunerError> {
    let black = match oracle.input_size() {
        Some(s) => RgbImage::new(s, s),
        None => RgbImage::new(width, height),
    };
    class_probabilities(&checked_scores(oracle, &black, classes)?)
}

/// Number of present classes whose masked region is strictly more
/// probable for that class than a black image is.
pub fn reward_image(
    masks: &[Vec<bool>],
    image: &RgbImage,
    classes: &[String],
    oracle: &mut dyn SimilarityOracle,
) -> Result<u32, TunerError> {
    let black = black_probabilities(oracle, image.width(), image.height(), classes)?;
    reward_image_with_black(masks, image, classes, oracle, &black)
}

/// [`reward_image`] with the black-image probabilities supplied (they
/// depend only on the image size and class list, so callers cache them).
pub fn reward_image_with_black(
    masks: &[Vec<bool>],
    image: &RgbImage,
    classes: &[String],
    oracle: &mut dyn SimilarityOracle,
    black: &[f64],
) -> Result<u32, TunerError> {
    if classes.is_empty() {
        return Err(TunerError::NoClasses);
    }
    if masks.len() != classes.len() || black.len() != classes.len() {
        return Err(TunerError::MaskCount {
            masks: masks.len(),
            classes: classes.len(),
        });
    }
    let size = oracle.input_size();
    let mut reward = 0;
    for (k, mask) in masks.iter().enumerate() {
        let input = oracle_input(image, mask, size)?;
        if class_probability(oracle, &input, classes, k)? > black[k] {
            reward += 1;
        }
    }
    Ok(reward)
}

/// Rewards of one configuration over a validation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub config: PipelineConfig,
    /// Reward of each validation image, in order; failed images count 0.
    pub per_image: Vec<u32>,
    pub total: u64,
    /// `(image name, error)` for every image that could not be scored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<(String, String)>,
}

/// Run the pipeline at `config` on every item and sum the rewards.
pub fn reward_dataset(
    items: &[super::ValidationItem],
    config: &PipelineConfig,
    oracle: &mut dyn SimilarityOracle,
) -> Result<RewardReport, TunerError> {
    super::DatasetEvaluator::new(items.to_vec(), oracle).report(config)
}
