//! Complex Gabor filtering on curved regions and its phase/magnitude output.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frequency::FrequencyMap;
use crate::image::{bilinear, scharr_gradient, GrayImage};
use crate::orientation::{orientation_field, OrientationField};
use crate::region::{canonical_normal, trace_curved_region};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    /// Direction of the ring normal in the kernel frame, radians.
    pub theta: f64,
    /// Ring frequency, cycles/px.
    pub f: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub half_size: usize,
}

impl GaborParams {
    /// Bandwidth tied to the local wavelength: `sigma_x = 0.5 / f`,
    /// `sigma_y = 1.5 / f`, half size `ceil(3 max(sigma))`.
    pub fn for_frequency(f: f64) -> Self {
        let sigma_x = 0.5 / f;
        let sigma_y = 1.5 / f;
        Self { theta: 0.0, f, sigma_x, sigma_y, half_size: (3.0 * sigma_x.max(sigma_y)).ceil() as usize }
    }

    fn validate(&self) -> Result<()> {
        if !(self.f > 0.0) || !(self.sigma_x > 0.0) || !(self.sigma_y > 0.0) {
            return Err(Error::Param(format!(
                "Gabor parameters need f, sigma_x, sigma_y > 0 (got {}, {}, {})",
                self.f, self.sigma_x, self.sigma_y
            )));
        }
        Ok(())
    }
}

/// Square complex kernel sampled at integer offsets `-half..=half`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexKernel {
    pub half: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexKernel {
    pub fn size(&self) -> usize {
        2 * self.half + 1
    }

    /// Value at offset `(x, y)`.
    pub fn at(&self, x: isize, y: isize) -> (f64, f64) {
        let h = self.half as isize;
        let k = ((y + h) * (2 * h + 1) + (x + h)) as usize;
        (self.re[k], self.im[k])
    }
}

/// Gaussian envelope times complex carrier along the rotated x axis.
pub fn gabor_kernel(params: &GaborParams) -> Result<ComplexKernel> {
    params.validate()?;
    let h = params.half_size as isize;
    let (s, c) = params.theta.sin_cos();
    let n = (2 * h + 1) as usize;
    let mut re = Vec::with_capacity(n * n);
    let mut im = Vec::with_capacity(n * n);
    for y in -h..=h {
        for x in -h..=h {
            let (x, y) = (x as f64, y as f64);
            let xt = x * c + y * s;
            let yt = -x * s + y * c;
            let env = (-0.5 * (xt * xt / (params.sigma_x * params.sigma_x) + yt * yt / (params.sigma_y * params.sigma_y))).exp();
            let arg = TAU * params.f * xt;
            re.push(env * arg.cos());
            im.push(env * arg.sin());
        }
    }
    Ok(ComplexKernel { half: params.half_size, re, im })
}

/// Accumulated complex response with per-pixel contribution counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexResponse {
    pub width: usize,
    pub height: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub weight: Vec<f64>,
}

impl ComplexResponse {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, re: vec![0.0; n], im: vec![0.0; n], weight: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborConfig {
    pub p: usize,
    pub q: usize,
    /// Spacing of the patch seed grid, px. Responses between seeds are
    /// interpolated.
    pub stride: usize,
    /// Reference direction fixing the sign of each patch's normal.
    pub axis: [f64; 2],
}

impl Default for GaborConfig {
    fn default() -> Self {
        Self { p: 80, q: 80, stride: 8, axis: [1.0, 0.0] }
    }
}

/// Response at a grid node with its carrier wave vector.
struct Node {
    c: [f64; 2],
    re: f64,
    im: f64,
    k: [f64; 2],
}

/// Filtered value at the center of the patch seeded at `center`.
fn filter_patch(img: &GrayImage, orient: &OrientationField, center: [f64; 2], f: f64, cfg: &GaborConfig) -> Option<(f64, f64)> {
    let params = GaborParams::for_frequency(f);
    let h = params.half_size;
    // Samples beyond the kernel support cannot reach the center.
    let p = cfg.p.min(h);
    let q = cfg.q.min(h);
    let region = trace_curved_region(img, orient, center, p, q, cfg.axis).ok()?;
    if !region.valid[region.index(0, 0)] {
        return None;
    }
    let (sum, n) = region
        .values
        .iter()
        .zip(&region.valid)
        .filter(|(_, &ok)| ok)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    let mean = sum / n as f64;
    let cols = region.cols();

    // The kernel at theta = 0 factors into an envelope-weighted carrier
    // across the contours (i) and a real Gaussian along them (j).
    let (pi, qi) = (p as isize, q as isize);
    let gy = |t: isize| (-0.5 * (t * t) as f64 / (params.sigma_y * params.sigma_y)).exp();
    let gx = |t: isize| (-0.5 * (t * t) as f64 / (params.sigma_x * params.sigma_x)).exp();
    let ky: Vec<f64> = (-qi..=qi).map(gy).collect();

    // Weighted least squares for P(t) ~ mu + A cos(wt) + B sin(wt) over the
    // valid support; with a complete support this is the plain Gabor
    // response up to a constant factor.
    let mut m = [0.0; 6]; // 1, c, s, cc, ss, cs
    let mut v = [0.0; 3]; // 1, c, s
    for i in -pi..=pi {
        let base = (i + pi) as usize * cols;
        // Convolution along j at the center column: sum_b P(i, -b) ky(b).
        let (mut vp, mut vm) = (0.0, 0.0);
        for (jj, kb) in ky.iter().enumerate() {
            let s = base + (2 * q - jj);
            if region.valid[s] {
                vp += (region.values[s] - mean) * kb;
                vm += kb;
            }
        }
        if vm == 0.0 {
            continue;
        }
        // Across the contours the sample at offset i pairs with kernel
        // offset a = -i: cos is even, sin odd.
        let g = gx(i);
        let (sin, cos) = (TAU * f * i as f64).sin_cos();
        let (kc, ks) = (cos, sin);
        let (wm, wp) = (vm * g, vp * g);
        m[0] += wm;
        m[1] += wm * kc;
        m[2] += wm * ks;
        m[3] += wm * kc * kc;
        m[4] += wm * ks * ks;
        m[5] += wm * kc * ks;
        v[0] += wp;
        v[1] += wp * kc;
        v[2] += wp * ks;
    }
    let [_, ca, cb] = solve3([[m[0], m[1], m[2]], [m[1], m[3], m[5]], [m[2], m[5], m[4]]], v)?;
    let half_mass = 0.5 * m[0];
    Some((ca * half_mass, -cb * half_mass))
}

/// Solves a symmetric 3x3 system by Cramer's rule; `None` when it is
/// numerically singular.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(a);
    let scale = a[0][0] * a[1][1] * a[2][2];
    if !(d.abs() > 1e-10 * scale.abs()) || scale == 0.0 {
        return None;
    }
    let mut x = [0.0; 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *xc = det3(m) / d;
    }
    Some(x)
}

/// Filters the patch at every node of a `stride` grid that has a valid
/// frequency, then fills the pixels in between by bilinear interpolation
/// over the valid surrounding nodes. Each node's response is first advanced
/// along its normal by its own carrier, `exp(2 pi i f n.(x - c))`, so nodes
/// more than a fraction of a period apart still agree in phase. `weight`
/// holds the valid interpolation mass. Nodes are computed in parallel and stored by
/// index, so the result does not depend on the worker count.
pub fn filter_image(
    img: &GrayImage,
    orient: &OrientationField,
    freq: &FrequencyMap,
    cfg: &GaborConfig,
) -> Result<ComplexResponse> {
    if cfg.stride == 0 {
        return Err(Error::Param("Gabor stride must be >= 1".into()));
    }
    if freq.width != img.width || freq.height != img.height || orient.width != img.width || orient.height != img.height {
        return Err(Error::Dimension("image, orientation and frequency maps differ in size".into()));
    }
    let (w, h) = (img.width, img.height);
    // Node positions per axis; the last pixel is always a node.
    let axis_nodes = |n: usize| {
        let mut v: Vec<usize> = (0..n).step_by(cfg.stride).collect();
        if *v.last().expect("non-empty image") != n - 1 {
            v.push(n - 1);
        }
        v
    };
    let (xs, ys) = (axis_nodes(w), axis_nodes(h));
    let nx = xs.len();
    let nodes: Vec<Option<Node>> = (0..nx * ys.len())
        .into_par_iter()
        .map(|k| {
            let (x, y) = (xs[k % nx], ys[k / nx]);
            let f = freq.get(x, y)?;
            let c = [x as f64, y as f64];
            let (re, im) = filter_patch(img, orient, c, f, cfg)?;
            let n = canonical_normal(orient, c, cfg.axis);
            Some(Node { c, re, im, k: [TAU * f * n[0], TAU * f * n[1]] })
        })
        .collect();
    // Interval index and fraction of every pixel along an axis.
    let locate = |nodes: &[usize], n: usize| -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(n);
        let mut i = 0;
        for p in 0..n {
            while i + 1 < nodes.len() - 1 && nodes[i + 1] <= p {
                i += 1;
            }
            if nodes.len() == 1 {
                out.push((0, 0, 0.0));
            } else {
                let (a, b) = (nodes[i], nodes[i + 1]);
                out.push((i, i + 1, (p - a) as f64 / (b - a) as f64));
            }
        }
        out
    };
    let (lx, ly) = (locate(&xs, w), locate(&ys, h));
    let mut resp = ComplexResponse::new(w, h);
    for (y, &(gy0, gy1, fy)) in ly.iter().enumerate() {
        for (x, &(gx0, gx1, fx)) in lx.iter().enumerate() {
            let corners = [
                (gy0 * nx + gx0, (1.0 - fx) * (1.0 - fy)),
                (gy0 * nx + gx1, fx * (1.0 - fy)),
                (gy1 * nx + gx0, (1.0 - fx) * fy),
                (gy1 * nx + gx1, fx * fy),
            ];
            let (mut re, mut im, mut wsum) = (0.0, 0.0, 0.0);
            for (n, wt) in corners {
                if wt > 0.0 {
                    if let Some(node) = &nodes[n] {
                        let t = node.k[0] * (x as f64 - node.c[0]) + node.k[1] * (y as f64 - node.c[1]);
                        let (sin, cos) = t.sin_cos();
                        re += wt * (node.re * cos - node.im * sin);
                        im += wt * (node.re * sin + node.im * cos);
                        wsum += wt;
                    }
                }
            }
            if wsum > 0.0 {
                let k = y * w + x;
                resp.re[k] = re / wsum;
                resp.im[k] = im / wsum;
                resp.weight[k] = wsum;
            }
        }
    }
    Ok(resp)
}

/// Wrapped phase with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseImage {
    pub width: usize,
    pub height: usize,
    pub phase: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PhaseImage {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut phase = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                phase.push(crate::phase::wrap(f(x, y)));
            }
        }
        Self { width, height, phase, valid: vec![true; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let k = y * self.width + x;
        self.valid[k].then(|| self.phase[k])
    }

    /// Sub-pixel phase from bilinear interpolation of `(cos, sin)` over the
    /// valid corners; `None` outside the image or when the valid corners
    /// carry under half the interpolation weight or cancel out.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut c = 0.0;
        let mut s = 0.0;
        let mut wsum = 0.0;
        for (xi, yi, wt) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            let k = yi * self.width + xi;
            if self.valid[k] && wt > 0.0 {
                c += wt * self.phase[k].cos();
                s += wt * self.phase[k].sin();
                wsum += wt;
            }
        }
        if wsum < 0.5 || c.hypot(s) < 1e-9 * wsum {
            return None;
        }
        Some(s.atan2(c))
    }
}

/// Splits a response into phase in `(-pi, pi]` and magnitude. Pixels with
/// zero weight or zero response are masked (phase 0, magnitude 0).
pub fn phase_magnitude(resp: &ComplexResponse) -> (PhaseImage, GrayImage) {
    let n = resp.width * resp.height;
    let mut phase = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut mag = GrayImage::new(resp.width, resp.height);
    for k in 0..n {
        if resp.weight[k] > 0.0 {
            let m = resp.re[k].hypot(resp.im[k]);
            mag.data[k] = m;
            if m > 0.0 {
                let a = resp.im[k].atan2(resp.re[k]);
                phase[k] = if a <= -PI { PI } else { a };
                valid[k] = true;
            }
        }
    }
    (PhaseImage { width: resp.width, height: resp.height, phase, valid }, mag)
}

/// Orientation of the phase image: the gradient of the wrapped phase is
/// taken through `(cos, sin)` so the cut at +-pi does not register as an
/// edge. Masked pixels contribute no gradient.
pub fn refined_orientation(phase: &PhaseImage, window_w: usize, window_h: usize) -> Result<OrientationField> {
    let (w, h) = (phase.width, phase.height);
    let cos = GrayImage::from_fn(w, h, |x, y| phase.get(x, y).map_or(0.0, f64::cos));
    let sin = GrayImage::from_fn(w, h, |x, y| phase.get(x, y).map_or(0.0, f64::sin));
    let (cx, cy) = scharr_gradient(&cos)?;
    let (sx, sy) = scharr_gradient(&sin)?;
    let usable = |x: usize, y: usize| {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        (y0..=y1).all(|yy| (x0..=x1).all(|xx| phase.valid[yy * w + xx]))
    };
    let mut gx = GrayImage::new(w, h);
    let mut gy = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if usable(x, y) {
                let k = y * w + x;
                gx.data[k] = cos.data[k] * sx.data[k] - sin.data[k] * cx.data[k];
                gy.data[k] = cos.data[k] * sy.data[k] - sin.data[k] * cy.data[k];
            }
        }
    }
    orientation_field(&gx, &gy, window_w, window_h)
}

/// Bilinear magnitude at a sub-pixel position (clamped to the image).
pub(crate) fn magnitude_at(mag: &GrayImage, x: f64, y: f64) -> f64 {
    let cx = x.clamp(0.0, (mag.width - 1) as f64);
    let cy = y.clamp(0.0, (mag.height - 1) as f64);
    bilinear(&mag.data, mag.width, mag.height, cx, cy)
}
