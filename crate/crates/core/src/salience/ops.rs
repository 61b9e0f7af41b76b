use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{AttentionStack, GradCamStack, GradientStack, PatchStack, SalienceError};

/// GradCAM weighting: `max(0, grad) * attn`, elementwise.
pub fn gradcam_combine(attn: &AttentionStack, grad: &GradientStack) -> Result<GradCamStack, SalienceError> {
    if attn.shape() != grad.shape() {
        return Err(SalienceError::ShapeMismatch {
            expected: attn.shape(),
            found: grad.shape(),
        });
    }
    let values = attn
        .values()
        .iter()
        .zip(grad.values())
        .map(|(a, g)| g.max(0.0) * a)
        .collect();
    GradCamStack::new(PatchStack::new(attn.n_classes(), attn.grid(), values)?)
}

/// Which prompt tokens belong to which class.
///
/// The first `prefix_len` tokens ("A picture of") never belong to a class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpanMap {
    spans: Vec<Vec<usize>>,
    prefix_len: usize,
}

impl TokenSpanMap {
    pub const DEFAULT_PREFIX: usize = 3;

    pub fn new(spans: Vec<Vec<usize>>, prefix_len: usize) -> Result<Self, SalienceError> {
        let mut seen = HashSet::new();
        for (class, span) in spans.iter().enumerate() {
            if span.is_empty() {
                return Err(SalienceError::EmptySpan { class });
            }
            for &index in span {
                if index < prefix_len {
                    return Err(SalienceError::PrefixToken {
                        class,
                        index,
                        prefix: prefix_len,
                    });
                }
                if !seen.insert(index) {
                    return Err(SalienceError::OverlappingSpans { index });
                }
            }
        }
        if spans.is_empty() {
            return Err(SalienceError::EmptySpan { class: 0 });
        }
        Ok(Self { spans, prefix_len })
    }

    /// Spans for classes laid out one after another right after the prefix,
    /// `token_counts[k]` tokens for class `k`.
    pub fn contiguous(token_counts: &[usize], prefix_len: usize) -> Result<Self, SalienceError> {
        let mut next = prefix_len;
        let spans = token_counts
            .iter()
            .map(|&n| {
                let span = (next..next + n).collect();
                next += n;
                span
            })
            .collect();
        Self::new(spans, prefix_len)
    }

    pub fn spans(&self) -> &[Vec<usize>] {
        &self.spans
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn n_classes(&self) -> usize {
        self.spans.len()
    }
}

/// Average per-token `P x P` maps into one map per class.
pub fn aggregate_token_maps(
    grid: usize,
    token_maps: &[Vec<f32>],
    spans: &TokenSpanMap,
) -> Result<AttentionStack, SalienceError> {
    let patches = grid * grid;
    for (index, map) in token_maps.iter().enumerate() {
        if map.len() != patches {
            return Err(SalienceError::TokenMapSize {
                index,
                len: map.len(),
                expected: patches,
            });
        }
    }
    let mut values = Vec::with_capacity(spans.n_classes() * patches);
    for (class, span) in spans.spans().iter().enumerate() {
        for &index in span {
            if index >= token_maps.len() {
                return Err(SalienceError::TokenOutOfRange {
                    class,
                    index,
                    available: token_maps.len(),
                });
            }
        }
        let n = span.len() as f64;
        values.extend((0..patches).map(|p| {
            let sum: f64 = span.iter().map(|&t| f64::from(token_maps[t][p])).sum();
            (sum / n) as f32
        }));
    }
    AttentionStack::from_values(spans.n_classes(), grid, values)
}

/// Softmax across the class axis at every patch, `softmax(x / temperature)`.
pub fn class_softmax(attn: &AttentionStack, temperature: f64) -> Result<AttentionStack, SalienceError> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(SalienceError::NonPositiveTemperature(temperature));
    }
    let (k, grid) = attn.shape();
    let n = grid * grid;
    let mut out = vec![0.0f32; k * n];
    let mut column = vec![0.0f64; k];
    for p in 0..n {
        for (c, slot) in column.iter_mut().enumerate() {
            *slot = f64::from(attn.values()[c * n + p]) / temperature;
        }
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for slot in column.iter_mut() {
            *slot = (*slot - max).exp();
            z += *slot;
        }
        for (c, slot) in column.iter().enumerate() {
            out[c * n + p] = (slot / z) as f32;
        }
    }
    AttentionStack::from_values(k, grid, out)
}
