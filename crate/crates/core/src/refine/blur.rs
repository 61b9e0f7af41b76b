use super::RefineError;

/// Normalized 1-D Gaussian over offsets `-radius..=radius`,
/// `radius = ceil(3 sigma)`.
pub fn gaussian_kernel_1d(sigma_px: f64) -> Result<Vec<f64>, RefineError> {
    if !(sigma_px.is_finite() && sigma_px > 0.0) {
        return Err(RefineError::Sigma(sigma_px));
    }
    let radius = (3.0 * sigma_px).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);
    Ok(kernel)
}

/// Index into `0..n` by half-sample symmetric reflection
/// (`... 1 0 | 0 1 ... n-1 | n-1 n-2 ...`), periodic for any offset.
fn reflect(index: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = index.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable Gaussian blur of a row-major `width x height` map.
///
/// `sigma_frac` is a fraction of the short image side. Borders reflect, so
/// the weights reaching each output pixel sum to 1 and, because the
/// reflected operator is symmetric, each input pixel's weight is spread
/// with total 1 as well: constants and the global mean are preserved.
pub fn gaussian_blur(map: &[f64], width: usize, height: usize, sigma_frac: f64) -> Result<Vec<f64>, RefineError> {
    if !(sigma_frac.is_finite() && sigma_frac > 0.0) {
        return Err(RefineError::Sigma(sigma_frac));
    }
    if map.len() != width * height {
        return Err(RefineError::Shape(format!(
            "map has {} values for {width}x{height}",
            map.len()
        )));
    }
    if map.is_empty() {
        return Ok(Vec::new());
    }
    let kernel = gaussian_kernel_1d(sigma_frac * width.min(height) as f64)?;
    let radius = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; map.len()];
    for y in 0..height {
        let src = &map[y * width..(y + 1) * width];
        for x in 0..width {
            rows[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * src[reflect(x as isize + t as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; map.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * rows[reflect(y as isize + t as isize - radius, height) * width + x])
                .sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_sigma_impulse_weights() {
        let k = gaussian_kernel_1d(1.0).unwrap();
        assert_eq!(k.len(), 7);
        let z: f64 = (-3i32..=3).map(|d| (-(d * d) as f64 / 2.0).exp()).sum();
        for (d, w) in (-3i32..=3).zip(&k) {
            assert!((w - (-(d * d) as f64 / 2.0).exp() / z).abs() < 1e-15);
        }
        assert!((k[3] - 0.3990).abs() < 1e-4);

        // Same numbers through the 2-D blur on a one-row image.
        let mut impulse = vec![0.0; 21];
        impulse[10] = 1.0;
        let out = gaussian_blur(&impulse, 21, 1, 1.0).unwrap();
        assert!((out[10] - k[3]).abs() < 1e-12);
        assert!((out[12] - k[5]).abs() < 1e-12);
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn weights_sum_to_one_at_borders() {
        // Blurring the all-ones map measures the weight sum at every pixel.
        let out = gaussian_blur(&[1.0; 35], 7, 5, 0.3).unwrap();
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn nonpositive_sigma_is_rejected() {
        assert!(matches!(gaussian_blur(&[0.0], 1, 1, 0.0), Err(RefineError::Sigma(_))));
        assert!(gaussian_blur(&[0.0], 1, 1, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn constants_are_preserved(c in 0.0f64..1.0, w in 1usize..12, h in 1usize..12, s in 0.01f64..0.6) {
            let out = gaussian_blur(&vec![c; w * h], w, h, s).unwrap();
            prop_assert!(out.iter().all(|v| (v - c).abs() < 1e-6));
        }

        #[test]
        fn global_mean_and_range_are_preserved(
            (w, h, map) in (1usize..14, 1usize..14).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.0f64..1.0, w * h))),
            s in 0.01f64..0.8,
        ) {
            let out = gaussian_blur(&map, w, h, s).unwrap();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((mean(&out) - mean(&map)).abs() < 1e-6);
            prop_assert!(out.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }
}
