//! Fully connected CRF with Gaussian pairwise kernels, solved by parallel
//! mean-field updates under a Potts compatibility.
//!
//! For pixels `i != j` the pairwise kernel is
//!
//! ```text
//! k(i, j) = w_s * exp(-|p_i - p_j|^2 / (2 theta_gamma^2))
//!         + w_a * exp(-|p_i - p_j|^2 / (2 theta_alpha^2) - |I_i - I_j|^2 / (2 theta_beta^2))
//! ```
//!
//! and one update sets
//! `Q_i(l) ∝ exp(-U_i(l) - sum_{j != i} k(i, j) * sum_{l' != l} Q_j(l'))`.
//! Since `sum_{l' != l} Q_j(l') = 1 - Q_j(l)`, the update is computed as
//! `exp(-U_i(l) + m_i(l))` normalized, with `m_i(l) = sum_j k(i, j) Q_j(l)`.

use serde::{Deserialize, Serialize};

use super::RefineError;
use crate::image::RgbImage;

/// How pairwise messages are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfPath {
    /// Exact `O(N^2)` summation over all pixel pairs.
    #[default]
    Exact,
    /// Smoothness term by full-extent separable convolution; appearance
    /// term only over pixel pairs whose colours are close enough for the
    /// kernel to matter (it is below `1e-9` beyond the cut-off).
    Pruned,
}

/// Dense CRF hyperparameters. Sigmas are in pixels and 0–255 colour units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfParams {
    pub iterations: usize,
    pub smooth_weight: f64,
    pub smooth_sigma: f64,
    pub appearance_weight: f64,
    pub appearance_sigma_xy: f64,
    pub appearance_sigma_rgb: f64,
    /// Probability floor applied when building unaries.
    pub unary_clamp: f64,
    pub path: CrfPath,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            smooth_weight: 3.0,
            smooth_sigma: 3.0,
            appearance_weight: 4.0,
            appearance_sigma_xy: 49.0,
            appearance_sigma_rgb: 5.0,
            unary_clamp: 1e-3,
            path: CrfPath::Exact,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        let positive = [
            ("smooth_sigma", self.smooth_sigma),
            ("appearance_sigma_xy", self.appearance_sigma_xy),
            ("appearance_sigma_rgb", self.appearance_sigma_rgb),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(RefineError::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("smooth_weight", self.smooth_weight),
            ("appearance_weight", self.appearance_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RefineError::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.unary_clamp > 0.0 && self.unary_clamp < 0.5) {
            return Err(RefineError::InvalidParam(format!(
                "unary_clamp must lie in (0, 0.5), got {}",
                self.unary_clamp
            )));
        }
        Ok(())
    }
}

/// Per-pixel negative-log potentials over `n_labels` labels, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Unaries {
    width: usize,
    height: usize,
    n_labels: usize,
    values: Vec<f64>,
}

impl Unaries {
    pub fn new(width: usize, height: usize, n_labels: usize, values: Vec<f64>) -> Result<Self, RefineError> {
        if n_labels == 0 || values.len() != width * height * n_labels {
            return Err(RefineError::Shape(format!(
                "unaries: {} values for {width}x{height} pixels and {n_labels} labels",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RefineError::NonFinite {
                what: "unary",
                index: i,
            });
        }
        Ok(Self {
            width,
            height,
            n_labels,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.n_labels..(index + 1) * self.n_labels]
    }
}

/// Per-pixel marginals `Q` over labels, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldState {
    width: usize,
    height: usize,
    n_labels: usize,
    q: Vec<f64>,
}

impl MeanFieldState {
    /// Wrap marginals; every pixel must be a probability vector (± 1e-6).
    pub fn new(width: usize, height: usize, n_labels: usize, q: Vec<f64>) -> Result<Self, RefineError> {
        if n_labels == 0 || q.len() != width * height * n_labels {
            return Err(RefineError::Shape(format!(
                "marginals: {} values for {width}x{height} pixels and {n_labels} labels",
                q.len()
            )));
        }
        for (i, px) in q.chunks_exact(n_labels).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(RefineError::NotDistribution { pixel: i });
            }
        }
        Ok(Self {
            width,
            height,
            n_labels,
            q,
        })
    }

    /// `softmax(-unary)` per pixel.
    pub fn from_unaries(unaries: &Unaries) -> Self {
        let mut q = unaries.values.iter().map(|u| -u).collect::<Vec<_>>();
        for px in q.chunks_exact_mut(unaries.n_labels) {
            normalize_exp(px);
        }
        Self {
            width: unaries.width,
            height: unaries.height,
            n_labels: unaries.n_labels,
            q,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.q[index * self.n_labels..(index + 1) * self.n_labels]
    }
}

/// In place: `x <- exp(x - max) / sum`.
fn normalize_exp(px: &mut [f64]) {
    let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in px.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in px.iter_mut() {
        *v /= sum;
    }
}

/// Run `params.iterations` parallel mean-field updates from `softmax(-unary)`.
pub fn densecrf_meanfield(
    unaries: &Unaries,
    image: &RgbImage,
    params: &CrfParams,
) -> Result<MeanFieldState, RefineError> {
    densecrf_meanfield_with(unaries, image, params, |_, _| {})
}

/// As [`densecrf_meanfield`], calling `observe(iteration, state)` after
/// every update (iteration counts from 1).
pub fn densecrf_meanfield_with(
    unaries: &Unaries,
    image: &RgbImage,
    params: &CrfParams,
    mut observe: impl FnMut(usize, &MeanFieldState),
) -> Result<MeanFieldState, RefineError> {
    params.validate()?;
    if image.width() != unaries.width || image.height() != unaries.height {
        return Err(RefineError::Shape(format!(
            "unaries are {}x{} but the image is {}x{}",
            unaries.width,
            unaries.height,
            image.width(),
            image.height()
        )));
    }
    let mut state = MeanFieldState::from_unaries(unaries);
    if params.smooth_weight == 0.0 && params.appearance_weight == 0.0 {
        // No coupling: softmax(-unary) is already the fixed point.
        for t in 1..=params.iterations {
            observe(t, &state);
        }
        return Ok(state);
    }
    let kernel = PairwiseKernel::new(image, params);
    let cache = match params.path {
        CrfPath::Exact if params.iterations > 1 => kernel.cached_triangle(),
        _ => None,
    };
    let mut messages = vec![0.0; state.q.len()];
    for t in 1..=params.iterations {
        messages.fill(0.0);
        match params.path {
            CrfPath::Exact => kernel.exact_messages(cache.as_deref(), &state.q, state.n_labels, &mut messages),
            CrfPath::Pruned => kernel.pruned_messages(&state.q, state.n_labels, &mut messages),
        }
        for ((q, u), m) in state
            .q
            .chunks_exact_mut(state.n_labels)
            .zip(unaries.values.chunks_exact(unaries.n_labels))
            .zip(messages.chunks_exact(state.n_labels))
        {
            for l in 0..q.len() {
                q[l] = m[l] - u[l];
            }
            normalize_exp(q);
        }
        observe(t, &state);
    }
    Ok(state)
}

/// Largest kernel triangle (in `f64` entries, about 512 MiB) kept in memory
/// across iterations of the exact path; larger images recompute it.
const KERNEL_CACHE_ENTRIES: usize = 1 << 26;

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Transpose pixel-major marginals to one contiguous run per label.
fn label_major(q: &[f64], n_labels: usize) -> Vec<f64> {
    let n = q.len() / n_labels;
    let mut t = vec![0.0; q.len()];
    for (p, px) in q.chunks_exact(n_labels).enumerate() {
        for (l, v) in px.iter().enumerate() {
            t[l * n + p] = *v;
        }
    }
    t
}

/// Lookup tables for the two Gaussian kernels on one image.
struct PairwiseKernel<'a> {
    image: &'a RgbImage,
    /// `w_s * exp(-d^2 / 2 theta_gamma^2)` split per axis (weight on x only).
    smooth_x: Vec<f64>,
    smooth_y: Vec<f64>,
    appear_x: Vec<f64>,
    appear_y: Vec<f64>,
    /// `exp(-d^2 / 2 theta_beta^2)` per channel difference 0..=255.
    colour: Vec<f64>,
    smooth_weight: f64,
    colour_sigma: f64,
}

fn gauss_table(len: usize, sigma: f64, weight: f64) -> Vec<f64> {
    (0..len)
        .map(|d| weight * (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

impl<'a> PairwiseKernel<'a> {
    fn new(image: &'a RgbImage, params: &CrfParams) -> Self {
        let (w, h) = (image.width(), image.height());
        Self {
            image,
            smooth_x: gauss_table(w, params.smooth_sigma, params.smooth_weight),
            smooth_y: gauss_table(h, params.smooth_sigma, 1.0),
            appear_x: gauss_table(w, params.appearance_sigma_xy, params.appearance_weight),
            appear_y: gauss_table(h, params.appearance_sigma_xy, 1.0),
            colour: gauss_table(256, params.appearance_sigma_rgb, 1.0),
            smooth_weight: params.smooth_weight,
            colour_sigma: params.appearance_sigma_rgb,
        }
    }

    #[inline]
    fn colour_term(&self, a: &[u8], b: &[u8]) -> f64 {
        self.colour[a[0].abs_diff(b[0]) as usize]
            * self.colour[a[1].abs_diff(b[1]) as usize]
            * self.colour[a[2].abs_diff(b[2]) as usize]
    }

    /// Kernel values `k(i, j)` for `j = i + 1 .. n`, written to `row`.
    fn kernel_row(&self, i: usize, row: &mut [f64]) {
        let w = self.image.width();
        let n = row.len() + i + 1;
        let rgb = self.image.as_bytes();
        let (xi, yi) = (i % w, i / w);
        let ci = &rgb[i * 3..i * 3 + 3];
        let mut j = i + 1;
        while j < n {
            let yj = j / w;
            let line_end = ((yj + 1) * w).min(n);
            let dy = yi.abs_diff(yj);
            let (sy, ay) = (self.smooth_y[dy], self.appear_y[dy]);
            for (jj, k) in (j..line_end).zip(row[j - i - 1..line_end - i - 1].iter_mut()) {
                let dx = xi.abs_diff(jj - yj * w);
                *k = self.smooth_x[dx] * sy + self.appear_x[dx] * ay * self.colour_term(ci, &rgb[jj * 3..jj * 3 + 3]);
            }
            j = line_end;
        }
    }

    /// The packed upper triangle of the kernel, if it fits the cache cap.
    fn cached_triangle(&self) -> Option<Vec<f64>> {
        let n = self.image.width() * self.image.height();
        let pairs = n * n.saturating_sub(1) / 2;
        if pairs > KERNEL_CACHE_ENTRIES {
            return None;
        }
        let mut tri = vec![0.0; pairs];
        let mut start = 0;
        for i in 0..n {
            let len = n - i - 1;
            self.kernel_row(i, &mut tri[start..start + len]);
            start += len;
        }
        Some(tri)
    }

    /// Both kernels, every unordered pair visited once.
    ///
    /// For each pixel `i` the kernel row `k(i, j), j > i` is taken from
    /// `cache` (or computed), then every label does one dot product
    /// (messages into `i`) and one axpy (messages into all `j`) over
    /// label-major copies of `q`.
    fn exact_messages(&self, cache: Option<&[f64]>, q: &[f64], n_labels: usize, out: &mut [f64]) {
        let n = self.image.width() * self.image.height();
        let q_t = label_major(q, n_labels);
        let mut out_t = vec![0.0; q.len()];
        let mut scratch = if cache.is_some() { Vec::new() } else { vec![0.0; n] };
        let mut start = 0;
        for i in 0..n {
            let len = n - i - 1;
            let ks: &[f64] = match cache {
                Some(tri) => &tri[start..start + len],
                None => {
                    self.kernel_row(i, &mut scratch[..len]);
                    &scratch[..len]
                }
            };
            start += len;
            for l in 0..n_labels {
                let ql = &q_t[l * n..(l + 1) * n];
                let qi = ql[i];
                let ol = &mut out_t[l * n..(l + 1) * n];
                ol[i] += dot(ks, &ql[i + 1..]);
                for (o, k) in ol[i + 1..].iter_mut().zip(ks) {
                    *o += k * qi;
                }
            }
        }
        for (p, o) in out.chunks_exact_mut(n_labels).enumerate() {
            for (l, v) in o.iter_mut().enumerate() {
                *v += out_t[l * n + p];
            }
        }
    }

    fn pruned_messages(&self, q: &[f64], n_labels: usize, out: &mut [f64]) {
        self.smooth_by_convolution(q, n_labels, out);
        self.appearance_by_colour_buckets(q, n_labels, out);
    }

    /// Full-extent separable Gaussian convolution minus the self term.
    fn smooth_by_convolution(&self, q: &[f64], n_labels: usize, out: &mut [f64]) {
        if self.smooth_weight == 0.0 {
            return;
        }
        let (w, h) = (self.image.width(), self.image.height());
        let mut rows = vec![0.0; q.len()];
        for y in 0..h {
            for x in 0..w {
                let o = &mut rows[(y * w + x) * n_labels..(y * w + x + 1) * n_labels];
                for x2 in 0..w {
                    let g = self.smooth_x[x.abs_diff(x2)];
                    let src = &q[(y * w + x2) * n_labels..(y * w + x2 + 1) * n_labels];
                    for l in 0..n_labels {
                        o[l] += g * src[l];
                    }
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let o = &mut out[i * n_labels..(i + 1) * n_labels];
                for y2 in 0..h {
                    let g = self.smooth_y[y.abs_diff(y2)];
                    let src = &rows[(y2 * w + x) * n_labels..(y2 * w + x + 1) * n_labels];
                    for l in 0..n_labels {
                        o[l] += g * src[l];
                    }
                }
                let self_weight = self.smooth_x[0] * self.smooth_y[0];
                for l in 0..n_labels {
                    o[l] -= self_weight * q[i * n_labels + l];
                }
            }
        }
    }

    /// Appearance term restricted to pairs within a colour cut-off, found by
    /// bucketing colours into cubes as wide as the cut-off.
    fn appearance_by_colour_buckets(&self, q: &[f64], n_labels: usize, out: &mut [f64]) {
        if self.appear_x[0] == 0.0 {
            return;
        }
        // exp(-c^2 / 2 sigma^2) < 1e-9 for c > 6.5 sigma.
        let cutoff = (6.5 * self.colour_sigma).ceil().max(1.0) as usize;
        let side = 256usize.div_ceil(cutoff);
        let w = self.image.width();
        let n = w * self.image.height();
        let rgb = self.image.as_bytes();
        let bucket_of = |i: usize| {
            let c = &rgb[i * 3..i * 3 + 3];
            (c[0] as usize / cutoff, c[1] as usize / cutoff, c[2] as usize / cutoff)
        };
        let mut buckets: std::collections::BTreeMap<(usize, usize, usize), Vec<usize>> = Default::default();
        for i in 0..n {
            buckets.entry(bucket_of(i)).or_default().push(i);
        }
        let range = |b: usize| b.saturating_sub(1)..=(b + 1).min(side - 1);
        for i in 0..n {
            let (xi, yi) = (i % w, i / w);
            let ci = &rgb[i * 3..i * 3 + 3];
            let (br, bg, bb) = bucket_of(i);
            let o = &mut out[i * n_labels..(i + 1) * n_labels];
            for r in range(br) {
                for g in range(bg) {
                    for b in range(bb) {
                        let Some(members) = buckets.get(&(r, g, b)) else {
                            continue;
                        };
                        for &j in members {
                            if j == i {
                                continue;
                            }
                            let (dx, dy) = (xi.abs_diff(j % w), yi.abs_diff(j / w));
                            let k =
                                self.appear_x[dx] * self.appear_y[dy] * self.colour_term(ci, &rgb[j * 3..j * 3 + 3]);
                            let qj = &q[j * n_labels..(j + 1) * n_labels];
                            for l in 0..n_labels {
                                o[l] += k * qj[l];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription of the update with an explicit Potts matrix.
    fn brute_force_update(q: &[f64], u: &[f64], img: &RgbImage, p: &CrfParams, labels: usize) -> Vec<f64> {
        let w = img.width();
        let n = w * img.height();
        let mut next = vec![0.0; q.len()];
        for i in 0..n {
            let mut energy = vec![0.0; labels];
            for (l, e) in energy.iter_mut().enumerate() {
                let mut pair = 0.0;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dx = (i % w) as f64 - (j % w) as f64;
                    let dy = (i / w) as f64 - (j / w) as f64;
                    let d2 = dx * dx + dy * dy;
                    let (a, b) = (img.pixel(i % w, i / w), img.pixel(j % w, j / w));
                    let c2: f64 = (0..3).map(|c| (a[c] as f64 - b[c] as f64).powi(2)).sum();
                    let k = p.smooth_weight * (-d2 / (2.0 * p.smooth_sigma.powi(2))).exp()
                        + p.appearance_weight
                            * (-d2 / (2.0 * p.appearance_sigma_xy.powi(2))
                                - c2 / (2.0 * p.appearance_sigma_rgb.powi(2)))
                            .exp();
                    for l2 in 0..labels {
                        let mu = if l == l2 { 0.0 } else { 1.0 };
                        pair += k * mu * q[j * labels + l2];
                    }
                }
                *e = -u[i * labels + l] - pair;
            }
            let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = energy.iter().map(|e| (e - max).exp()).sum();
            for l in 0..labels {
                next[i * labels + l] = (energy[l] - max).exp() / z;
            }
        }
        next
    }

    fn random_case(rng: &mut ChaCha8Rng, w: usize, h: usize, labels: usize) -> (Unaries, RgbImage) {
        let u = (0..w * h * labels).map(|_| rng.random_range(0.0..4.0)).collect();
        let bytes = (0..w * h * 3).map(|_| rng.random()).collect();
        (
            Unaries::new(w, h, labels, u).unwrap(),
            RgbImage::from_raw(w, h, bytes).unwrap(),
        )
    }

    #[test]
    fn one_update_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = CrfParams {
            iterations: 1,
            appearance_sigma_rgb: 60.0,
            appearance_sigma_xy: 2.0,
            smooth_sigma: 1.0,
            ..CrfParams::default()
        };
        for (w, h) in [(2, 1), (2, 2), (3, 3)] {
            let (u, img) = random_case(&mut rng, w, h, 3);
            let q0 = MeanFieldState::from_unaries(&u);
            let expected = brute_force_update(q0.values(), u.values(), &img, &params, 3);
            let got = densecrf_meanfield(&u, &img, &params).unwrap();
            for (a, b) in got.values().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_weights_keep_the_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (u, img) = random_case(&mut rng, 4, 3, 3);
        let params = CrfParams {
            smooth_weight: 0.0,
            appearance_weight: 0.0,
            ..CrfParams::default()
        };
        let q = densecrf_meanfield(&u, &img, &params).unwrap();
        assert_eq!(q, MeanFieldState::from_unaries(&u));

        let uniform = Unaries::new(2, 2, 4, vec![0.7; 16]).unwrap();
        let q = densecrf_meanfield(&uniform, &RgbImage::new(2, 2), &params).unwrap();
        assert!(q.values().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (u, img) = random_case(&mut rng, 3, 2, 2);
        let params = CrfParams {
            iterations: 0,
            ..CrfParams::default()
        };
        assert_eq!(
            densecrf_meanfield(&u, &img, &params).unwrap(),
            MeanFieldState::from_unaries(&u)
        );
    }

    #[test]
    fn rows_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (u, img) = random_case(&mut rng, 6, 5, 4);
        densecrf_meanfield_with(&u, &img, &CrfParams::default(), |_, s| {
            for px in s.values().chunks(4) {
                assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        })
        .unwrap();
    }

    #[test]
    fn cached_kernel_matches_recomputed_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (u, img) = random_case(&mut rng, 7, 5, 3);
        let kernel = PairwiseKernel::new(&img, &CrfParams::default());
        let tri = kernel.cached_triangle().unwrap();
        assert_eq!(tri.len(), 35 * 34 / 2);
        let q = MeanFieldState::from_unaries(&u);
        let mut cached = vec![0.0; q.values().len()];
        let mut fresh = vec![0.0; q.values().len()];
        kernel.exact_messages(Some(&tri), q.values(), 3, &mut cached);
        kernel.exact_messages(None, q.values(), 3, &mut fresh);
        assert_eq!(cached, fresh);
    }

    #[test]
    fn pruned_path_tracks_exact_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (w, h) in [(8, 8), (16, 12)] {
            let (u, img) = random_case(&mut rng, w, h, 3);
            let exact = densecrf_meanfield(&u, &img, &CrfParams::default()).unwrap();
            let pruned = densecrf_meanfield(
                &u,
                &img,
                &CrfParams {
                    path: CrfPath::Pruned,
                    ..CrfParams::default()
                },
            )
            .unwrap();
            for (a, b) in exact.values().iter().zip(pruned.values()) {
                assert!((a - b).abs() <= 0.02 * a.abs().max(1e-12) + 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Unaries::new(1, 1, 2, vec![0.0, f64::NAN]).is_err());
        let u = Unaries::new(2, 1, 2, vec![0.0; 4]).unwrap();
        assert!(densecrf_meanfield(&u, &RgbImage::new(1, 2), &CrfParams::default()).is_err());
        let bad = CrfParams {
            smooth_sigma: 0.0,
            ..CrfParams::default()
        };
        assert!(densecrf_meanfield(&u, &RgbImage::new(2, 1), &bad).is_err());
    }
}
