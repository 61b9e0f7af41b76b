//! Patch-grid salience: attention and gradient stacks, GradCAM weighting,
//! token-to-class aggregation and the iterative dropout driver.
//!
//! Every stack is a `K x P x P` tensor of `f32` stored row-major with the
//! class index outermost. All accumulation in this module happens in `f32`
//! in iteration order, so the aggregate-equals-history-sum invariant holds
//! bit-exactly.

mod dropout;
mod ops;

pub use dropout::{drop_set_update, salience_dropout_run, AccumulatedSalience, DropoutRound};
pub use ops::{aggregate_token_maps, class_softmax, gradcam_combine, TokenSpanMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum SalienceError {
    #[error("invalid stack shape: {classes} classes on a {grid}x{grid} grid with {len} values")]
    InvalidShape { classes: usize, grid: usize, len: usize },
    #[error("shape mismatch: expected {expected:?} (classes, grid), found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{what} value at flat index {index} is not finite ({value})")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f32,
    },
    #[error("{what} value at flat index {index} is negative ({value})")]
    Negative {
        what: &'static str,
        index: usize,
        value: f32,
    },
    #[error("token span for class {class} is empty")]
    EmptySpan { class: usize },
    #[error("token index {index} for class {class} is out of range ({available} token maps)")]
    TokenOutOfRange {
        class: usize,
        index: usize,
        available: usize,
    },
    #[error("token index {index} for class {class} falls inside the excluded {prefix}-token prompt prefix")]
    PrefixToken { class: usize, index: usize, prefix: usize },
    #[error("token index {index} appears in more than one class span")]
    OverlappingSpans { index: usize },
    #[error("token map {index} has {len} values, expected {expected}")]
    TokenMapSize { index: usize, len: usize, expected: usize },
    #[error("softmax temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("active patch set is empty")]
    EmptyActiveSet,
    #[error("class-agnostic map has {len} values but the grid has {expected} patches")]
    MapSize { len: usize, expected: usize },
    #[error("dropout rounds must be at least 1")]
    NoRounds,
    #[error("provider grid {found} does not match configured grid {expected}")]
    GridMismatch { expected: usize, found: usize },
    #[error("provider failed during dropout iteration {iteration}: {source}")]
    Provider {
        iteration: usize,
        #[source]
        source: ProviderError,
    },
}

/// Raw `K x P x P` storage shared by every stack newtype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchStack {
    n_classes: usize,
    grid: usize,
    values: Vec<f32>,
}

impl PatchStack {
    pub fn new(n_classes: usize, grid: usize, values: Vec<f32>) -> Result<Self, SalienceError> {
        if n_classes == 0 || grid == 0 || values.len() != n_classes * grid * grid {
            return Err(SalienceError::InvalidShape {
                classes: n_classes,
                grid,
                len: values.len(),
            });
        }
        Ok(Self {
            n_classes,
            grid,
            values,
        })
    }

    pub fn zeros(n_classes: usize, grid: usize) -> Self {
        assert!(n_classes > 0 && grid > 0, "stack dimensions must be positive");
        Self {
            n_classes,
            grid,
            values: vec![0.0; n_classes * grid * grid],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_classes, self.grid)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, class: usize, row: usize, col: usize) -> f32 {
        self.values[(class * self.grid + row) * self.grid + col]
    }

    /// The `P x P` map of one class, row-major.
    pub fn class_map(&self, class: usize) -> &[f32] {
        let n = self.patches();
        &self.values[class * n..(class + 1) * n]
    }

    pub(crate) fn class_map_mut(&mut self, class: usize) -> &mut [f32] {
        let n = self.patches();
        &mut self.values[class * n..(class + 1) * n]
    }

    /// Sum over classes at every patch.
    pub fn class_sum(&self) -> Vec<f32> {
        let n = self.patches();
        let mut out = vec![0.0f32; n];
        for k in 0..self.n_classes {
            for (o, v) in out.iter_mut().zip(self.class_map(k)) {
                *o += *v;
            }
        }
        out
    }

    fn check_finite(&self, what: &'static str) -> Result<(), SalienceError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(SalienceError::NonFinite {
                what,
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    fn check_nonnegative(&self, what: &'static str) -> Result<(), SalienceError> {
        self.check_finite(what)?;
        match self.values.iter().position(|v| *v < 0.0) {
            Some(index) => Err(SalienceError::Negative {
                what,
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }
}

macro_rules! stack_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize)]
        #[serde(transparent)]
        pub struct $name(PatchStack);

        impl std::ops::Deref for $name {
            type Target = PatchStack;

            fn deref(&self) -> &PatchStack {
                &self.0
            }
        }

        impl $name {
            pub fn into_inner(self) -> PatchStack {
                self.0
            }
        }
    };
}

stack_newtype!(
    /// Cross-attention salience per class. Values are finite and nonnegative.
    AttentionStack
);
stack_newtype!(
    /// Gradient of the matching loss with respect to each attention entry.
    /// Values are finite and may be negative.
    GradientStack
);
stack_newtype!(
    /// Gradient-weighted attention, `max(0, grad) * attn`. Nonnegative.
    GradCamStack
);

impl AttentionStack {
    pub fn new(stack: PatchStack) -> Result<Self, SalienceError> {
        stack.check_nonnegative("attention")?;
        Ok(Self(stack))
    }

    pub fn from_values(n_classes: usize, grid: usize, values: Vec<f32>) -> Result<Self, SalienceError> {
        Self::new(PatchStack::new(n_classes, grid, values)?)
    }
}

impl GradientStack {
    pub fn new(stack: PatchStack) -> Result<Self, SalienceError> {
        stack.check_finite("gradient")?;
        Ok(Self(stack))
    }

    pub fn from_values(n_classes: usize, grid: usize, values: Vec<f32>) -> Result<Self, SalienceError> {
        Self::new(PatchStack::new(n_classes, grid, values)?)
    }
}

impl GradCamStack {
    pub fn new(stack: PatchStack) -> Result<Self, SalienceError> {
        stack.check_nonnegative("gradcam")?;
        Ok(Self(stack))
    }

    pub fn zeros(n_classes: usize, grid: usize) -> Self {
        Self(PatchStack::zeros(n_classes, grid))
    }

    /// Reinterpret as an attention stack (both are nonnegative).
    pub fn into_attention(self) -> AttentionStack {
        AttentionStack(self.0)
    }
}

impl<'de> Deserialize<'de> for AttentionStack {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        AttentionStack::new(PatchStack::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Patches that have not been dropped yet, on a `P x P` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePatchSet {
    grid: usize,
    active: Vec<bool>,
}

impl ActivePatchSet {
    /// All `P^2` patches active.
    pub fn full(grid: usize) -> Self {
        Self {
            grid,
            active: vec![true; grid * grid],
        }
    }

    pub fn from_flags(grid: usize, active: Vec<bool>) -> Option<Self> {
        (grid > 0 && active.len() == grid * grid).then_some(Self { grid, active })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.active.iter().any(|a| *a)
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.active[row * self.grid + col]
    }

    pub fn is_active_index(&self, index: usize) -> bool {
        self.active[index]
    }

    pub fn flags(&self) -> &[bool] {
        &self.active
    }

    /// Row-major indices of active patches.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter_map(|(i, a)| a.then_some(i))
    }

    pub fn is_subset_of(&self, other: &ActivePatchSet) -> bool {
        self.grid == other.grid && self.active.iter().zip(&other.active).all(|(a, b)| !*a || *b)
    }

    /// One byte per patch (1 = active), row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.active.iter().map(|a| u8::from(*a)).collect()
    }

    pub fn from_bytes(grid: usize, bytes: &[u8]) -> Option<Self> {
        if grid == 0 || bytes.len() != grid * grid || bytes.iter().any(|b| *b > 1) {
            return None;
        }
        Some(Self {
            grid,
            active: bytes.iter().map(|b| *b == 1).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_shape_is_validated() {
        assert!(PatchStack::new(2, 3, vec![0.0; 18]).is_ok());
        assert!(matches!(
            PatchStack::new(2, 3, vec![0.0; 17]),
            Err(SalienceError::InvalidShape { .. })
        ));
        assert!(PatchStack::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn attention_rejects_negative_and_nan() {
        assert!(matches!(
            AttentionStack::from_values(1, 1, vec![-0.5]),
            Err(SalienceError::Negative { index: 0, .. })
        ));
        assert!(matches!(
            AttentionStack::from_values(1, 2, vec![0.0, 0.0, f32::NAN, 0.0]),
            Err(SalienceError::NonFinite { index: 2, .. })
        ));
        assert!(GradientStack::from_values(1, 1, vec![-3.0]).is_ok());
        assert!(GradientStack::from_values(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn class_sum_adds_across_classes() {
        let s = PatchStack::new(2, 1, vec![0.25, 0.5]).unwrap();
        assert_eq!(s.class_sum(), vec![0.75]);
    }

    #[test]
    fn active_set_bytes() {
        let s = ActivePatchSet::from_flags(2, vec![true, false, false, true]).unwrap();
        assert_eq!(s.to_bytes(), vec![1, 0, 0, 1]);
        assert_eq!(ActivePatchSet::from_bytes(2, &s.to_bytes()), Some(s.clone()));
        assert_eq!(ActivePatchSet::from_bytes(2, &[1, 2, 0, 0]), None);
        assert_eq!(s.indices().collect::<Vec<_>>(), vec![0, 3]);
        assert!(s.is_subset_of(&ActivePatchSet::full(2)));
        assert!(!ActivePatchSet::full(2).is_subset_of(&s));
    }
}
