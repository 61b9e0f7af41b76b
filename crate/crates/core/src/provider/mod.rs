//! Salience providers: anything that answers "attention and gradient for
//! this set of active patches".
//!
//! Two implementations ship here: [`SyntheticProvider`], a deterministic
//! in-process stand-in driven by planted masks, and [`SubprocessSession`],
//! which talks to an external model process over line-delimited JSON with
//! SALT-encoded tensors (see [`protocol`]).

pub mod protocol;
pub mod salt;
mod serve;
mod subprocess;
mod synthetic;

pub use serve::{serve, ProviderFactory};
pub use subprocess::{JsonLineProcess, SubprocessSession, DEFAULT_QUERY_TIMEOUT};
pub use synthetic::{LayerHeadLandscape, PlantedBlob, SyntheticProvider, SyntheticScene};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::salience::{ActivePatchSet, AttentionStack, GradientStack};
use salt::SaltError;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("failed to launch provider `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("provider i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("provider exited unexpectedly ({0})")]
    Exited(String),
    #[error("provider did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed line from provider ({reason}): {line}")]
    Malformed { line: String, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("provider reported an error: {0}")]
    Remote(String),
    #[error("tensor decode failed: {0}")]
    Salt(#[from] SaltError),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("{tensor} has shape {found:?} (classes, grid), expected {expected:?}")]
    ShapeMismatch {
        tensor: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("attention for class {class} at inactive patch ({row}, {col}) is {value}, expected 0")]
    InactiveNonZero {
        class: usize,
        row: usize,
        col: usize,
        value: f32,
    },
    #[error("invalid provider init: {0}")]
    InvalidInit(String),
    #[error("session is unusable after an earlier failure: {0}")]
    Unusable(String),
}

/// Session parameters for one image and one class list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderInit {
    /// Image path, or any identifier the provider understands.
    pub image: String,
    /// Ordered class names; their count defines `K`.
    pub classes: Vec<String>,
    pub layer: u32,
    pub head: u32,
    /// Patch grid side `P`.
    pub grid: usize,
}

impl ProviderInit {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.classes.is_empty() {
            return Err(ProviderError::InvalidInit("class list is empty".into()));
        }
        if self.layer == 0 || self.head == 0 {
            return Err(ProviderError::InvalidInit(format!(
                "layer and head are 1-based, got layer {} head {}",
                self.layer, self.head
            )));
        }
        if self.grid == 0 {
            return Err(ProviderError::InvalidInit("grid must be positive".into()));
        }
        Ok(())
    }
}

/// Where a session's salience comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ProviderSpec {
    /// In-process provider for a planted scene.
    Synthetic(SyntheticScene),
    /// External process speaking the line protocol, launched per session.
    Subprocess {
        command: String,
        /// Image reference passed in `init`.
        image: String,
        grid: usize,
        timeout: std::time::Duration,
    },
}

impl ProviderSpec {
    /// Open a session for `classes` at one layer and head.
    pub fn open(
        &self,
        classes: &[String],
        layer: u32,
        head: u32,
    ) -> Result<Box<dyn SalienceProvider + Send>, ProviderError> {
        match self {
            Self::Synthetic(scene) => {
                scene.validate()?;
                if scene.n_classes() != classes.len() {
                    return Err(ProviderError::InvalidInit(format!(
                        "scene plants {} classes but {} were requested",
                        scene.n_classes(),
                        classes.len()
                    )));
                }
                Ok(Box::new(SyntheticProvider::at(scene.clone(), layer, head)))
            }
            Self::Subprocess {
                command,
                image,
                grid,
                timeout,
            } => {
                let init = ProviderInit {
                    image: image.clone(),
                    classes: classes.to_vec(),
                    layer,
                    head,
                    grid: *grid,
                };
                Ok(Box::new(SubprocessSession::start(command, &init, *timeout)?))
            }
        }
    }

    pub fn grid(&self) -> usize {
        match self {
            Self::Synthetic(scene) => scene.grid(),
            Self::Subprocess { grid, .. } => *grid,
        }
    }
}

/// Attention and matching-loss gradient for every class.
#[derive(Clone, Debug, PartialEq)]
pub struct SalienceResponse {
    pub attention: AttentionStack,
    pub gradient: GradientStack,
}

pub trait SalienceProvider {
    fn n_classes(&self) -> usize;

    fn grid(&self) -> usize;

    /// Salience for the image with every inactive patch zeroed out.
    fn query(&mut self, active: &ActivePatchSet) -> Result<SalienceResponse, ProviderError>;
}

impl<P: SalienceProvider + ?Sized> SalienceProvider for Box<P> {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }

    fn grid(&self) -> usize {
        (**self).grid()
    }

    fn query(&mut self, active: &ActivePatchSet) -> Result<SalienceResponse, ProviderError> {
        (**self).query(active)
    }
}

/// Check a response against the session's `K`, `P` and the active set.
///
/// Attention at inactive patches must be exactly zero.
pub fn validate_response(
    response: &SalienceResponse,
    n_classes: usize,
    grid: usize,
    active: &ActivePatchSet,
) -> Result<(), ProviderError> {
    let expected = (n_classes, grid);
    for (tensor, shape) in [
        ("attention", response.attention.shape()),
        ("gradient", response.gradient.shape()),
    ] {
        if shape != expected {
            return Err(ProviderError::ShapeMismatch {
                tensor,
                expected,
                found: shape,
            });
        }
    }
    if active.grid() != grid {
        return Err(ProviderError::Protocol(format!(
            "active set grid {} does not match session grid {grid}",
            active.grid()
        )));
    }
    for class in 0..n_classes {
        let map = response.attention.class_map(class);
        for index in active.flags().iter().enumerate().filter(|(_, a)| !**a).map(|(i, _)| i) {
            if map[index] != 0.0 {
                return Err(ProviderError::InactiveNonZero {
                    class,
                    row: index / grid,
                    col: index % grid,
                    value: map[index],
                });
            }
        }
    }
    Ok(())
}
