//! Training-free open-vocabulary segmentation from cross-attention salience.
//!
//! A vision-language model (or the synthetic stand-in) supplies per-class
//! cross-attention maps and matching-loss gradients on a `P x P` patch grid.
//! The pipeline sharpens them with GradCAM, repeatedly drops the most
//! salient half of the patches so attention spreads over whole objects,
//! thresholds and upsamples the accumulated salience, softens it with a
//! Gaussian blur and snaps it to image edges with a dense CRF. A
//! weakly-supervised reward drives random search over the layer, head,
//! threshold and blur hyperparameters.
//!
//! Modules follow the data flow: [`salience`] → [`refine`], with
//! [`provider`] supplying tensors, [`tuner`] choosing hyperparameters and
//! [`evalkit`] scoring results.

pub mod config;
pub mod evalkit;
pub mod image;
pub mod provider;
pub mod refine;
pub mod salience;
pub mod tuner;

pub use config::PipelineConfig;
pub use image::RgbImage;
