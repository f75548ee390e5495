//! Local ring orientation from image gradients.
//!
//! Gradients are averaged as structure-tensor components, i.e. in
//! doubled-angle space, so antipodal gradients on either flank of a thin
//! ridge reinforce instead of cancelling. The resulting direction is rotated
//! by 90° to point along the rings.

use crate::error::{Error, Result};
use crate::image::{bilinear, convolve_separable, GrayImage};

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    pub width: usize,
    pub height: usize,
    /// Unit direction along the local structure; `d` and `-d` are the same
    /// orientation.
    pub dirs: Vec<[f64; 2]>,
    /// Doubled-angle coherence in `[0, 1]`.
    pub coherence: Vec<f64>,
    // coherence * (cos 2a, sin 2a) of the orientation angle a, kept for
    // sub-pixel interpolation.
    doubled: Vec<[f64; 2]>,
}

impl OrientationField {
    /// Builds a field from explicit per-pixel directions (normalized here).
    pub fn from_dirs(width: usize, height: usize, dirs: Vec<[f64; 2]>, coherence: Vec<f64>) -> Result<Self> {
        if dirs.len() != width * height || coherence.len() != width * height {
            return Err(Error::Dimension("orientation field buffers".into()));
        }
        let mut out = Self { width, height, dirs, coherence, doubled: Vec::new() };
        for d in &mut out.dirs {
            let n = d[0].hypot(d[1]);
            *d = if n > 0.0 { [d[0] / n, d[1] / n] } else { [1.0, 0.0] };
        }
        out.doubled = out
            .dirs
            .iter()
            .zip(&out.coherence)
            .map(|(d, &c)| [c * (d[0] * d[0] - d[1] * d[1]), c * 2.0 * d[0] * d[1]])
            .collect();
        Ok(out)
    }

    /// Builds a field from an analytic direction function, coherence 1.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(f64, f64) -> [f64; 2]) -> Self {
        let mut dirs = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                dirs.push(f(x as f64, y as f64));
            }
        }
        Self::from_dirs(width, height, dirs, vec![1.0; width * height]).expect("sizes match")
    }

    #[inline]
    pub fn dir(&self, x: usize, y: usize) -> [f64; 2] {
        self.dirs[y * self.width + x]
    }

    /// Angle of the orientation at a pixel, in `(-pi, pi]`.
    pub fn angle(&self, x: usize, y: usize) -> f64 {
        let d = self.dir(x, y);
        d[1].atan2(d[0])
    }

    /// Sub-pixel direction, interpolated in doubled-angle space. Positions
    /// outside the image are clamped to the border.
    pub fn dir_at(&self, x: f64, y: f64) -> [f64; 2] {
        let cx = x.clamp(0.0, (self.width - 1) as f64);
        let cy = y.clamp(0.0, (self.height - 1) as f64);
        let c = bilinear_pair(&self.doubled, self.width, self.height, cx, cy);
        let n = (c[0] * c[0] + c[1] * c[1]).sqrt();
        if n < 1e-12 {
            let xi = cx.round() as usize;
            let yi = cy.round() as usize;
            return self.dir(xi, yi);
        }
        half_angle([c[0] / n, c[1] / n])
    }

    /// Coherence at a sub-pixel position (bilinear, clamped).
    pub fn coherence_at(&self, x: f64, y: f64) -> f64 {
        let cx = x.clamp(0.0, (self.width - 1) as f64);
        let cy = y.clamp(0.0, (self.height - 1) as f64);
        bilinear(&self.coherence, self.width, self.height, cx, cy)
    }
}

fn bilinear_pair(data: &[[f64; 2]], w: usize, h: usize, x: f64, y: f64) -> [f64; 2] {
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let a = data[y0 * w + x0][k];
        let b = data[y0 * w + x1][k];
        let c = data[y1 * w + x0][k];
        let d = data[y1 * w + x1][k];
        *o = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy;
    }
    out
}

/// Unit vector at half the angle of the unit vector `(cos 2a, sin 2a)`.
#[inline]
fn half_angle(c: [f64; 2]) -> [f64; 2] {
    let cx = ((1.0 + c[0]) * 0.5).max(0.0).sqrt();
    let sy = ((1.0 - c[0]) * 0.5).max(0.0).sqrt();
    if c[1] < 0.0 {
        [cx, -sy]
    } else {
        [cx, sy]
    }
}

/// Orientation from gradient components averaged over a `window_w` x
/// `window_h` box (both odd). Pixels whose window carries no gradient get
/// coherence 0 and direction `(1, 0)`.
pub fn orientation_field(gx: &GrayImage, gy: &GrayImage, window_w: usize, window_h: usize) -> Result<OrientationField> {
    if gx.width != gy.width || gx.height != gy.height {
        return Err(Error::Dimension("gradient components differ in size".into()));
    }
    if window_w.is_multiple_of(2) || window_h.is_multiple_of(2) {
        return Err(Error::Param(format!("orientation window {window_w}x{window_h} must be odd")));
    }
    let (w, h) = (gx.width, gx.height);
    let mut a = GrayImage::new(w, h);
    let mut b = GrayImage::new(w, h);
    let mut m = GrayImage::new(w, h);
    for i in 0..w * h {
        let (x, y) = (gx.data[i], gy.data[i]);
        a.data[i] = x * x - y * y;
        b.data[i] = 2.0 * x * y;
        m.data[i] = x * x + y * y;
    }
    let kx = vec![1.0 / window_w as f64; window_w];
    let ky = vec![1.0 / window_h as f64; window_h];
    let a = convolve_separable(&a, &kx, &ky);
    let b = convolve_separable(&b, &kx, &ky);
    let m = convolve_separable(&m, &kx, &ky);

    let mut dirs = Vec::with_capacity(w * h);
    let mut coherence = Vec::with_capacity(w * h);
    let mut doubled = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (ai, bi, mi) = (a.data[i], b.data[i], m.data[i]);
        let norm = ai.hypot(bi);
        if mi <= 1e-300 || norm <= 1e-15 * mi {
            dirs.push([1.0, 0.0]);
            coherence.push(0.0);
            doubled.push([0.0, 0.0]);
            continue;
        }
        // Rotating by 90° negates the doubled-angle vector.
        let c2 = [-ai / norm, -bi / norm];
        let coh = (norm / mi).min(1.0);
        dirs.push(half_angle(c2));
        coherence.push(coh);
        doubled.push([coh * c2[0], coh * c2[1]]);
    }
    Ok(OrientationField { width: w, height: h, dirs, coherence, doubled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{gaussian_smooth, scharr_gradient};
    use std::f64::consts::PI;

    fn field_of(img: &GrayImage, win: usize) -> OrientationField {
        let s = gaussian_smooth(img, 1.0).unwrap();
        let (gx, gy) = scharr_gradient(&s).unwrap();
        orientation_field(&gx, &gy, win, win).unwrap()
    }

    #[test]
    fn horizontal_stripes_give_horizontal_orientation() {
        let img = GrayImage::from_fn(64, 64, |_, y| 0.5 + 0.5 * (2.0 * PI * y as f64 / 10.0).cos());
        let f = field_of(&img, 15);
        for y in 10..54 {
            for x in 10..54 {
                assert!(f.dir(x, y)[0].abs() > 0.99, "at ({x},{y}) {:?}", f.dir(x, y));
            }
        }
    }

    #[test]
    fn flat_image_has_zero_coherence() {
        let f = field_of(&GrayImage::filled(20, 20, 0.4), 5);
        assert!(f.coherence.iter().all(|&c| c == 0.0));
        assert!(f.dirs.iter().all(|&d| d == [1.0, 0.0]));
    }

    #[test]
    fn concentric_circles_are_tangential() {
        let (cx, cy) = (64.0, 64.0);
        let img = GrayImage::from_fn(128, 128, |x, y| {
            let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            0.5 + 0.5 * (2.0 * PI * r / 8.0).cos()
        });
        let f = field_of(&img, 7);
        let mut worst: f64 = 0.0;
        for y in 0..128 {
            for x in 0..128 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let r = dx.hypot(dy);
                if r <= 20.0 || r > 56.0 {
                    continue;
                }
                let d = f.dir(x, y);
                // Perpendicular to the radius within 2°.
                let cosang = (d[0] * dx + d[1] * dy).abs() / r;
                worst = worst.max(cosang);
            }
        }
        assert!(worst < (2.0f64).to_radians().sin(), "worst |cos| = {worst}");
    }

    #[test]
    fn gradient_negation_leaves_field_unchanged() {
        let img = GrayImage::from_fn(40, 30, |x, y| ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos() + 1.0) / 2.0);
        let (gx, gy) = scharr_gradient(&img).unwrap();
        let neg = |g: &GrayImage| GrayImage { data: g.data.iter().map(|v| -v).collect(), ..g.clone() };
        let a = orientation_field(&gx, &gy, 5, 7).unwrap();
        let b = orientation_field(&neg(&gx), &neg(&gy), 5, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quarter_turn_rotates_field() {
        let img = GrayImage::from_fn(64, 64, |x, y| {
            0.5 + 0.5 * (2.0 * PI * (0.8 * x as f64 + 0.3 * y as f64) / 12.0).cos()
        });
        // rot(x, y) = img(y, W-1-x): a 90° rotation of the raster.
        let rot = GrayImage::from_fn(64, 64, |x, y| img.get(y, 63 - x));
        let f = field_of(&img, 9);
        let g = field_of(&rot, 9);
        for y in 12..52 {
            for x in 12..52 {
                // Pixel (x, y) of rot is pixel (y, 63-x) of img; direction
                // (dx, dy) in img maps to (-dy, dx) in rot.
                let d = f.dir(y, 63 - x);
                let expected = d[0].atan2(-d[1]);
                let got = g.dir(x, y)[1].atan2(g.dir(x, y)[0]);
                assert!(crate::phase::axial_distance(got, expected) < 1e-6);
            }
        }
    }

    #[test]
    fn even_windows_rejected() {
        let g = GrayImage::new(5, 5);
        assert!(orientation_field(&g, &g, 4, 5).is_err());
    }

    #[test]
    fn sub_pixel_direction_is_unit_and_flip_free() {
        let f = OrientationField::from_fn(10, 10, |_, _| [0.0, -1.0]);
        let d = f.dir_at(3.3, 4.7);
        assert!((d[0].hypot(d[1]) - 1.0).abs() < 1e-12);
        assert!(d[0].abs() < 1e-9 && (d[1].abs() - 1.0).abs() < 1e-9);
    }
}
