use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ProviderError, SalienceProvider, SalienceResponse};
use crate::salience::{ActivePatchSet, AttentionStack, GradientStack};

/// Gradient on patches outside the planted support.
const OFF_SUPPORT_GRADIENT: f32 = -0.05;

/// Profile distances are measured in units of `reach / PROFILE_SPAN`, where
/// `reach` is the distance from the peak to the farthest planted patch.
const PROFILE_SPAN: f64 = 8.0;

/// One class's planted patch mask and its most discriminative patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlob {
    /// `P` rows of `P` characters, `'1'` for planted patches.
    #[serde(with = "mask_rows")]
    pub mask: Vec<Vec<bool>>,
    /// `(row, col)` of the attention peak; must lie on the mask.
    pub peak: (usize, usize),
}

/// Makes layer/head choice matter: away from `(best_layer, best_head)` the
/// planted masks slide right by `shift_per_step` patches per unit of
/// Manhattan distance, rounded, so attention lands off the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHeadLandscape {
    pub best_layer: u32,
    pub best_head: u32,
    pub shift_per_step: f64,
}

impl LayerHeadLandscape {
    pub fn shift(&self, layer: u32, head: u32) -> usize {
        let steps = layer.abs_diff(self.best_layer) + head.abs_diff(self.best_head);
        (self.shift_per_step * steps as f64).round() as usize
    }
}

/// Deterministic stand-in for a vision-language model on one image.
///
/// Per class `k` and patch `p`, the raw signal is
/// `s = mask(p) * exp(-decay * dist(p, peak))`, with `dist` the Euclidean
/// distance between patch centres measured so that the farthest planted
/// patch sits at 8 (the profile has the same shape at any object size). Each query rescales it by its maximum over the
/// active patches (so the strongest surviving part always reads 1, the way
/// attention shifts to the next most discriminative region once the peak
/// is dropped) and adds `noise * xi`, `xi` in `[0, 1)` fixed per
/// `(seed, k, p)`. The gradient is `+1` on the planted support and slightly
/// negative elsewhere. Inactive patches read exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub grid: usize,
    pub blobs: Vec<PlantedBlob>,
    pub decay: f64,
    pub noise: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LayerHeadLandscape>,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::InvalidInit(m));
        if self.grid == 0 {
            return bad("scene grid must be positive".into());
        }
        if self.blobs.is_empty() {
            return bad("scene declares no classes".into());
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return bad(format!("decay must be finite and >= 0, got {}", self.decay));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        for (k, blob) in self.blobs.iter().enumerate() {
            if blob.mask.len() != self.grid || blob.mask.iter().any(|r| r.len() != self.grid) {
                return bad(format!("class {k} mask is not {0}x{0}", self.grid));
            }
            let (r, c) = blob.peak;
            if r >= self.grid || c >= self.grid || !blob.mask[r][c] {
                return bad(format!("class {k} peak ({r}, {c}) is not on its mask"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn n_classes(&self) -> usize {
        self.blobs.len()
    }

    /// A centred square blob covering the middle half of the grid.
    pub fn single_blob(grid: usize, noise: f64, decay: f64, seed: u64) -> Self {
        let lo = grid / 4;
        let hi = (3 * grid / 4).max(lo + 1);
        let mask = (0..grid)
            .map(|r| {
                (0..grid)
                    .map(|c| (lo..hi).contains(&r) && (lo..hi).contains(&c))
                    .collect()
            })
            .collect();
        let centre = (lo + hi - 1) / 2;
        Self {
            grid,
            blobs: vec![PlantedBlob {
                mask,
                peak: (centre, centre),
            }],
            decay,
            noise,
            seed,
            landscape: None,
        }
    }

    /// Planted masks as seen at `(layer, head)`, flattened row-major.
    pub fn masks_at(&self, layer: u32, head: u32) -> Vec<Vec<bool>> {
        let shift = self.landscape.as_ref().map_or(0, |l| l.shift(layer, head));
        let p = self.grid;
        self.blobs
            .iter()
            .map(|blob| {
                let mut flat = vec![false; p * p];
                for (r, row) in blob.mask.iter().enumerate() {
                    for (c, &on) in row.iter().enumerate() {
                        if on && c + shift < p {
                            flat[r * p + c + shift] = true;
                        }
                    }
                }
                flat
            })
            .collect()
    }
}

/// In-process provider for a [`SyntheticScene`], viewed at one layer/head.
#[derive(Clone, Debug)]
pub struct SyntheticProvider {
    scene: SyntheticScene,
    masks: Vec<Vec<bool>>,
    signal: Vec<Vec<f64>>,
    jitter: Vec<f32>,
}

impl SyntheticProvider {
    /// Provider at the scene's best layer/head (no landscape shift).
    pub fn new(scene: SyntheticScene) -> Self {
        let (l, h) = scene.landscape.as_ref().map_or((1, 1), |l| (l.best_layer, l.best_head));
        Self::at(scene, l, h)
    }

    pub fn at(scene: SyntheticScene, layer: u32, head: u32) -> Self {
        let p = scene.grid;
        let shift = scene.landscape.as_ref().map_or(0, |l| l.shift(layer, head));
        let masks = scene.masks_at(layer, head);
        let signal = scene
            .blobs
            .iter()
            .zip(&masks)
            .map(|(blob, mask)| {
                let (pr, pc) = (blob.peak.0 as f64, (blob.peak.1 + shift) as f64);
                let reach = (0..p * p)
                    .filter(|&i| mask[i])
                    .map(|i| (((i / p) as f64 - pr).powi(2) + ((i % p) as f64 - pc).powi(2)).sqrt())
                    .fold(1.0, f64::max);
                let unit = PROFILE_SPAN / reach;
                (0..p * p)
                    .map(|i| {
                        if !mask[i] {
                            return 0.0;
                        }
                        let (r, c) = ((i / p) as f64, (i % p) as f64);
                        let d = ((r - pr).powi(2) + (c - pc).powi(2)).sqrt() * unit;
                        (-scene.decay * d).exp()
                    })
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        let jitter = (0..scene.blobs.len() * p * p).map(|_| rng.random::<f32>()).collect();
        Self {
            scene,
            masks,
            signal,
            jitter,
        }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }
}

impl SalienceProvider for SyntheticProvider {
    fn n_classes(&self) -> usize {
        self.scene.blobs.len()
    }

    fn grid(&self) -> usize {
        self.scene.grid
    }

    fn query(&mut self, active: &ActivePatchSet) -> Result<SalienceResponse, ProviderError> {
        let p = self.scene.grid;
        if active.grid() != p {
            return Err(ProviderError::Protocol(format!(
                "active set grid {} does not match scene grid {p}",
                active.grid()
            )));
        }
        let k = self.n_classes();
        let mut attention = Vec::with_capacity(k * p * p);
        let mut gradient = Vec::with_capacity(k * p * p);
        for class in 0..k {
            let signal = &self.signal[class];
            let z = active.indices().map(|i| signal[i]).fold(0.0f64, f64::max);
            let z = if z > 0.0 { z } else { 1.0 };
            for (i, (s, on)) in signal.iter().zip(active.flags()).enumerate() {
                if !on {
                    attention.push(0.0);
                    gradient.push(0.0);
                    continue;
                }
                let xi = self.jitter[class * p * p + i] as f64;
                attention.push((s / z + self.scene.noise * xi) as f32);
                gradient.push(if self.masks[class][i] {
                    1.0
                } else {
                    OFF_SUPPORT_GRADIENT
                });
            }
        }
        Ok(SalienceResponse {
            attention: AttentionStack::from_values(k, p, attention)
                .map_err(|e| ProviderError::InvalidTensor(e.to_string()))?,
            gradient: GradientStack::from_values(k, p, gradient)
                .map_err(|e| ProviderError::InvalidTensor(e.to_string()))?,
        })
    }
}

mod mask_rows {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &[Vec<bool>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(
            mask.iter()
                .map(|row| row.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>()),
        )
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<bool>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|row| {
                row.chars()
                    .map(|ch| match ch {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(D::Error::custom(format!(
                            "mask rows may only contain '0' or '1', found {other:?}"
                        ))),
                    })
                    .collect()
            })
            .collect()
    }
}
