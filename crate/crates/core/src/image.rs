//! Dense row-major rasters and the low-level operators the pipeline needs.
//!
//! Pixel `(x, y)` has its center at integer coordinates. All borders are
//! handled by clamp-to-edge.

use crate::error::{Error, Result};

/// Single-channel raster. Intensities are in `[0, 1]` after loading, but the
/// same container also carries signed fields such as gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Clamp-to-edge read with signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear sample; `None` outside the pixel-center hull.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        Some(bilinear(&self.data, self.width, self.height, x, y))
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checks the load-time invariant: finite values in `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        match self.data.iter().position(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            Some(i) => Err(Error::Param(format!(
                "pixel ({}, {}) = {} outside [0, 1]",
                i % self.width,
                i / self.width,
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Bilinear interpolation on a row-major grid; caller guarantees `(x, y)` is
/// inside `[0, w-1] x [0, h-1]`.
#[inline]
pub(crate) fn bilinear(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let a = data[y0 * w + x0];
    let b = data[y0 * w + x1];
    let c = data[y1 * w + x0];
    let d = data[y1 * w + x1];
    (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
}

/// Interleaved RGB raster with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        let data = gray.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self { width: gray.width, height: gray.height, data }
    }

    /// Channel mean, used when an RGB file is fed to a grayscale stage.
    pub fn to_gray_mean(&self) -> GrayImage {
        let data = self.data.chunks_exact(3).map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
        GrayImage { width: self.width, height: self.height, data }
    }
}

/// Normalized Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution with a centered odd-length kernel, clamp-to-edge.
pub(crate) fn convolve_separable(img: &GrayImage, kx: &[f64], ky: &[f64]) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kx.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + i as isize - rx, y as isize);
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in ky.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y as isize + i as isize - ry);
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

/// Gaussian smoothing; `sigma == 0` returns an identical copy.
pub fn gaussian_smooth(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Param(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    Ok(convolve_separable(img, &k, &k))
}

/// Scharr derivative: `(3, 10, 3) / 16` smoothing across, `(-1, 0, 1) / 2`
/// along. Returns `(gx, gy)`.
pub fn scharr_gradient(img: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::TooSmall { width: img.width, height: img.height, min: 3 });
    }
    const SMOOTH: [f64; 3] = [3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0];
    const DERIV: [f64; 3] = [-0.5, 0.0, 0.5];
    let gx = convolve_separable(img, &DERIV, &SMOOTH);
    let gy = convolve_separable(img, &SMOOTH, &DERIV);
    Ok((gx, gy))
}

/// Bilinear resample to `new_width`, keeping the aspect ratio.
pub fn resize_to_width(img: &GrayImage, new_width: usize) -> Result<GrayImage> {
    if new_width == 0 || img.width == 0 || img.height == 0 {
        return Err(Error::Param("cannot resize an empty image".into()));
    }
    let factor = new_width as f64 / img.width as f64;
    let new_height = ((img.height as f64 * factor).round() as usize).max(1);
    let sx = if new_width > 1 { (img.width - 1) as f64 / (new_width - 1) as f64 } else { 0.0 };
    let sy = if new_height > 1 { (img.height - 1) as f64 / (new_height - 1) as f64 } else { 0.0 };
    Ok(GrayImage::from_fn(new_width, new_height, |x, y| {
        bilinear(&img.data, img.width, img.height, x as f64 * sx, y as f64 * sy)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_preserves_constants() {
        let img = GrayImage::filled(20, 17, 0.5);
        let out = gaussian_smooth(&img, 2.0).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = GrayImage::from_fn(9, 7, |x, y| ((x * 31 + y * 17) % 11) as f64 / 10.0);
        let out = gaussian_smooth(&img, 0.0).unwrap();
        assert_eq!(out, img);
        assert!(gaussian_smooth(&img, -1.0).is_err());
    }

    #[test]
    fn impulse_response_matches_truncated_kernel() {
        // Oracle: evaluate the truncated, renormalized Gaussian directly.
        let sigma: f64 = 1.5;
        let radius = (3.0 * sigma).ceil() as i32;
        let norm: f64 = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).sum();
        let w0 = 1.0 / norm;
        let mut img = GrayImage::new(33, 33);
        img.set(16, 16, 1.0);
        let out = gaussian_smooth(&img, sigma).unwrap();
        assert!((out.get(16, 16) - w0 * w0).abs() < 1e-14);
        let w2 = (-4.0 / (2.0 * sigma * sigma)).exp() / norm;
        assert!((out.get(18, 15) - w2 * (-1.0 / (2.0 * sigma * sigma)).exp() / norm).abs() < 1e-14);
        assert!((out.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scharr_on_constant_and_ramp() {
        let flat = GrayImage::filled(8, 8, 0.3);
        let (gx, gy) = scharr_gradient(&flat).unwrap();
        assert!(gx.data.iter().chain(gy.data.iter()).all(|v| v.abs() < 1e-15));

        let a = 0.01;
        let ramp = GrayImage::from_fn(12, 10, |x, _| a * x as f64);
        let (gx, gy) = scharr_gradient(&ramp).unwrap();
        for y in 0..10 {
            for x in 1..11 {
                assert!((gx.get(x, y) - a).abs() < 1e-15);
                assert!(gy.get(x, y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scharr_rejects_tiny_images() {
        assert!(matches!(
            scharr_gradient(&GrayImage::new(2, 5)),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn scharr_transpose_symmetry() {
        let img = GrayImage::from_fn(11, 7, |x, y| ((x * x + 3 * y) % 13) as f64 / 13.0);
        let (gx, gy) = scharr_gradient(&img).unwrap();
        let (tgx, tgy) = scharr_gradient(&img.transposed()).unwrap();
        let close = |a: &GrayImage, b: &GrayImage| a.data.iter().zip(&b.data).all(|(p, q)| (p - q).abs() < 1e-14);
        assert!(close(&tgx, &gy.transposed()));
        assert!(close(&tgy, &gx.transposed()));
    }

    #[test]
    fn bilinear_sampling() {
        let img = GrayImage::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(img.sample(0.5, 0.5), Some(1.5));
        assert_eq!(img.sample(1.0, 1.0), Some(3.0));
        assert_eq!(img.sample(1.01, 0.0), None);
    }

    #[test]
    fn resize_keeps_aspect() {
        let img = GrayImage::from_fn(10, 4, |x, _| x as f64 / 9.0);
        let out = resize_to_width(&img, 19).unwrap();
        assert_eq!((out.width, out.height), (19, 8));
        assert!((out.get(18, 3) - 1.0).abs() < 1e-12);
        assert!((out.get(9, 0) - 0.5).abs() < 1e-12);
    }
}
