//! Minimal 8-bit RGB raster and the resampling the pipeline needs.

/// Interleaved 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    /// All-black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    /// Wrap raw interleaved bytes; `None` when the length is not `w * h * 3`.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (width.checked_mul(height)?.checked_mul(3)? == data.len()).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy with every pixel outside `mask` (row-major, `w * h`) set to black.
    pub fn masked(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.width * self.height, "mask size");
        let mut out = self.clone();
        for (px, keep) in out.data.chunks_exact_mut(3).zip(mask) {
            if !keep {
                px.fill(0);
            }
        }
        out
    }

    /// Bilinear resize with pixel-centre alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Self::new(width, height);
        if self.width == 0 || self.height == 0 {
            return out;
        }
        let xs = axis_weights(self.width, width);
        let ys = axis_weights(self.height, height);
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let mut rgb = [0u8; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    let at = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * 3 + c] as f64;
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    *v = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
                }
                out.put_pixel(x, y, rgb);
            }
        }
        out
    }
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Nearest-neighbour resize of a row-major `w x h` mask.
pub fn resize_mask_nearest(
    mask: &[bool],
    width: usize,
    height: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<bool> {
    assert_eq!(mask.len(), width * height, "mask size");
    let mut out = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let sy = (y * height / new_height).min(height.saturating_sub(1));
        for x in 0..new_width {
            let sx = (x * width / new_width).min(width.saturating_sub(1));
            out.push(mask[sy * width + sx]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_length_is_checked() {
        assert!(RgbImage::from_raw(2, 2, vec![0; 12]).is_some());
        assert!(RgbImage::from_raw(2, 2, vec![0; 11]).is_none());
    }

    #[test]
    fn bilinear_preserves_constants_and_identity() {
        let mut img = RgbImage::new(5, 3);
        for y in 0..3 {
            for x in 0..5 {
                img.put_pixel(x, y, [40, 90, 200]);
            }
        }
        let big = img.resize_bilinear(11, 7);
        assert!(big.as_bytes().chunks(3).all(|p| p == [40, 90, 200]));
        assert_eq!(img.resize_bilinear(5, 3), img);
    }

    #[test]
    fn bilinear_midpoint() {
        let img = RgbImage::from_raw(2, 1, vec![0, 0, 0, 200, 100, 50]).unwrap();
        let out = img.resize_bilinear(4, 1);
        // Centres at 0.25 and 0.75 of the way between the two source pixels
        // land on -0.25 (clamped to 0) and 0.25 for the first two outputs.
        assert_eq!(out.pixel(0, 0), [0, 0, 0]);
        assert_eq!(out.pixel(1, 0), [50, 25, 13]);
        assert_eq!(out.pixel(3, 0), [200, 100, 50]);
    }

    #[test]
    fn masking_and_nearest_mask_resize() {
        let img = RgbImage::from_raw(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(img.masked(&[false, true]).as_bytes(), &[0, 0, 0, 4, 5, 6]);
        let m = resize_mask_nearest(&[true, false], 2, 1, 4, 2);
        assert_eq!(m, vec![true, true, false, false, true, true, false, false]);
    }
}
