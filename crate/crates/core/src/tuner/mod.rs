//! Weakly supervised hyperparameter tuning.
//!
//! A [`SimilarityOracle`] scores images against class names. The reward of
//! one image counts the present classes whose masked region is more
//! probable for its own class than a black image is; the dataset reward
//! sums it over validation images that carry only class-name labels.
//! [`random_search`] samples a discrete [`SearchSpace`] in parallel groups
//! and [`staged_tune`] runs the two-stage protocol: layer, head and
//! threshold first on cheap single-round masks, then the blur width.

mod evaluate;
mod reward;
mod search;
mod space;

pub use evaluate::{DatasetEvaluator, PlantedLandscape, ValidationItem};
pub use reward::{
    black_probabilities, class_probabilities, class_probability, oracle_input, reward_dataset, reward_image,
    reward_image_with_black, FnOracle, PaletteOracle, RewardReport, SimilarityOracle, SubprocessOracle,
};
pub use search::{
    random_search, random_search_fn, staged_tune, ConfigEvaluator, FnEvaluator, Scored, SearchOutcome, StagedOutcome,
    TraceRecord,
};
pub use space::{Axis, SearchPoint, SearchSpace};

use thiserror::Error;

use crate::provider::ProviderError;
use crate::refine::RefineError;
use crate::salience::SalienceError;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("oracle: {0}")]
    Oracle(#[from] ProviderError),
    #[error("oracle returned {found} scores for {expected} classes")]
    ScoreCount { expected: usize, found: usize },
    #[error("oracle score for class {class} is not finite ({value})")]
    NonFiniteScore { class: usize, value: f64 },
    #[error("no classes to score")]
    NoClasses,
    #[error("class index {index} out of range for {count} classes")]
    ClassIndex { index: usize, count: usize },
    #[error("{masks} masks for {classes} present classes")]
    MaskCount { masks: usize, classes: usize },
    #[error("mask has {found} pixels, image has {expected}")]
    MaskSize { expected: usize, found: usize },
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("cannot split {layers} layer values into {groups} groups")]
    EmptyPartition { groups: usize, layers: usize },
    #[error("invalid search settings: {0}")]
    Settings(String),
    #[error("salience: {0}")]
    Salience(#[from] SalienceError),
    #[error("refinement: {0}")]
    Refine(#[from] RefineError),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}
