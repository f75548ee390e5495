//! Local ring frequency and curvature measured on curved regions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::orientation::OrientationField;
use crate::phase::axial_distance;
use crate::region::{trace_curved_region, CurvedRegion};

/// Frequency band and peak-detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyBand {
    /// Lowest accepted ring frequency (cycles/px).
    pub f_min: f64,
    /// Highest accepted ring frequency (cycles/px).
    pub f_max: f64,
    /// A peak must stand out from its neighbouring troughs by this fraction
    /// of the profile range.
    pub min_prominence: f64,
}

impl Default for FrequencyBand {
    fn default() -> Self {
        Self { f_min: 1.0 / 200.0, f_max: 0.25, min_prominence: 0.15 }
    }
}

/// Contour-averaged intensity profile across the rings (one entry per
/// contour, `None` where a contour has no valid samples).
pub fn ring_profile(region: &CurvedRegion) -> Vec<Option<f64>> {
    region
        .values
        .chunks(region.cols())
        .zip(region.valid.chunks(region.cols()))
        .map(|(vals, ok)| {
            let (sum, n) = vals
                .iter()
                .zip(ok)
                .filter(|(_, &v)| v)
                .fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect()
}

/// Light smoothing over valid entries only.
fn smooth_profile(profile: &[Option<f64>]) -> Vec<Option<f64>> {
    const K: [f64; 5] = [0.0625, 0.25, 0.375, 0.25, 0.0625];
    (0..profile.len())
        .map(|i| {
            profile[i]?;
            let (mut s, mut w) = (0.0, 0.0);
            for (k, kv) in K.iter().enumerate() {
                let j = i as isize + k as isize - 2;
                if j >= 0 && (j as usize) < profile.len() {
                    if let Some(v) = profile[j as usize] {
                        s += kv * v;
                        w += kv;
                    }
                }
            }
            Some(s / w)
        })
        .collect()
}

/// Positions of prominent maxima (sub-sample refined). A maximum counts only
/// when the profile rises into it and falls out of it by at least `delta`.
pub fn profile_peaks(profile: &[Option<f64>], min_prominence: f64) -> Vec<f64> {
    let smooth = smooth_profile(profile);
    let vals: Vec<(usize, f64)> = smooth.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    if vals.len() < 3 {
        return Vec::new();
    }
    let lo = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let delta = min_prominence * (hi - lo);
    if !(delta > 1e-12) {
        return Vec::new();
    }

    #[derive(PartialEq)]
    enum State {
        Start,
        Rising,
        Falling,
    }
    let mut state = State::Start;
    let (mut min_v, mut max_v) = (vals[0].1, vals[0].1);
    let mut max_k = 0usize;
    let mut peaks_k = Vec::new();
    for (k, &(_, v)) in vals.iter().enumerate() {
        match state {
            State::Start => {
                if v >= min_v + delta {
                    state = State::Rising;
                    max_v = v;
                    max_k = k;
                } else if v <= max_v - delta {
                    state = State::Falling;
                    min_v = v;
                } else {
                    min_v = min_v.min(v);
                    max_v = max_v.max(v);
                }
            }
            State::Rising => {
                if v > max_v {
                    max_v = v;
                    max_k = k;
                } else if v <= max_v - delta {
                    peaks_k.push(max_k);
                    state = State::Falling;
                    min_v = v;
                }
            }
            State::Falling => {
                if v < min_v {
                    min_v = v;
                } else if v >= min_v + delta {
                    state = State::Rising;
                    max_v = v;
                    max_k = k;
                }
            }
        }
    }

    peaks_k
        .into_iter()
        .map(|k| {
            let (i, v) = vals[k];
            // Parabolic refinement when both neighbours are contiguous.
            if k > 0 && k + 1 < vals.len() && vals[k - 1].0 + 1 == i && vals[k + 1].0 == i + 1 {
                let (a, c) = (vals[k - 1].1, vals[k + 1].1);
                let den = a - 2.0 * v + c;
                if den < 0.0 {
                    let off = 0.5 * (a - c) / den;
                    if off.abs() <= 0.5 {
                        return i as f64 + off;
                    }
                }
            }
            i as f64
        })
        .collect()
}

/// Ring frequency of a region from its peak count, or `None` when fewer
/// than two peaks are found, fewer than three contours are valid, or the
/// result falls outside the band.
pub fn estimate_frequency(region: &CurvedRegion, band: &FrequencyBand) -> Option<f64> {
    if region.valid_contours() < 3 {
        return None;
    }
    let peaks = profile_peaks(&ring_profile(region), band.min_prominence);
    if peaks.len() < 2 {
        return None;
    }
    let span = peaks[peaks.len() - 1] - peaks[0];
    if span <= 0.0 {
        return None;
    }
    let f = (peaks.len() - 1) as f64 / span;
    (f >= band.f_min && f <= band.f_max).then_some(f)
}

/// Mean orientation change between each contour's middle point and its
/// end points, in radians (at most pi/2 per pair).
pub fn local_curvature(orient: &OrientationField, region: &CurvedRegion) -> f64 {
    let angle_at = |c: [f64; 2]| {
        let d = orient.dir_at(c[0], c[1]);
        d[1].atan2(d[0])
    };
    let inside = |c: [f64; 2]| {
        c[0] >= 0.0 && c[1] >= 0.0 && c[0] <= (orient.width - 1) as f64 && c[1] <= (orient.height - 1) as f64
    };
    let (p, q) = (region.p as isize, region.q as isize);
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in -p..=p {
        let mid = region.coord(i, 0);
        if !inside(mid) {
            continue;
        }
        let a_mid = angle_at(mid);
        for j in [-q, q] {
            let end = region.coord(i, j);
            if j != 0 && inside(end) {
                sum += axial_distance(a_mid, angle_at(end));
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-pixel scalar map with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ScalarMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, values: vec![value; width * height], valid: vec![true; width * height] }
    }
}

/// Ring frequency in cycles/px.
pub type FrequencyMap = ScalarMap;
/// Orientation change across a region's contours, radians.
pub type CurvatureMap = ScalarMap;

/// Settings for the coarse frequency/curvature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub p: usize,
    pub q: usize,
    /// Grid spacing in pixels.
    pub stride: usize,
    pub band: FrequencyBand,
    pub axis: [f64; 2],
}

/// Evaluates frequency and curvature on a `stride` grid, fills invalid
/// grid nodes from valid neighbours (3x3 median), and expands to per-pixel
/// maps by nearest grid node.
pub fn estimate_maps(img: &GrayImage, orient: &OrientationField, cfg: &MapConfig) -> Result<(FrequencyMap, CurvatureMap)> {
    if cfg.stride == 0 {
        return Err(Error::Param("map stride must be >= 1".into()));
    }
    let (w, h) = (img.width, img.height);
    let gx: Vec<usize> = (0..w).step_by(cfg.stride).collect();
    let gy: Vec<usize> = (0..h).step_by(cfg.stride).collect();
    let rows: Vec<Vec<(Option<f64>, f64)>> = gy
        .par_iter()
        .map(|&y| {
            gx.iter()
                .map(|&x| {
                    let region = trace_curved_region(img, orient, [x as f64, y as f64], cfg.p, cfg.q, cfg.axis)
                        .expect("grid node inside image");
                    (estimate_frequency(&region, &cfg.band), local_curvature(orient, &region))
                })
                .collect()
        })
        .collect();
    let (nx, ny) = (gx.len(), gy.len());
    let grid_f: Vec<Option<f64>> = rows.iter().flat_map(|r| r.iter().map(|v| v.0)).collect();
    let grid_c: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|v| v.1)).collect();

    // Median over the valid 3x3 neighbourhood stabilizes peak-count noise.
    let smoothed: Vec<Option<f64>> = (0..nx * ny)
        .map(|k| {
            let (ix, iy) = ((k % nx) as isize, (k / nx) as isize);
            let mut vals: Vec<f64> = Vec::with_capacity(9);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (x, y) = (ix + dx, iy + dy);
                    if x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny {
                        if let Some(v) = grid_f[y as usize * nx + x as usize] {
                            vals.push(v);
                        }
                    }
                }
            }
            if grid_f[k].is_none() && vals.len() < 3 {
                return None;
            }
            if vals.is_empty() {
                return None;
            }
            vals.sort_by(|a, b| a.total_cmp(b));
            Some(vals[vals.len() / 2])
        })
        .collect();

    let mut freq = ScalarMap { width: w, height: h, values: vec![0.0; w * h], valid: vec![false; w * h] };
    let mut curv = ScalarMap { width: w, height: h, values: vec![0.0; w * h], valid: vec![true; w * h] };
    let s = cfg.stride as f64;
    for y in 0..h {
        let iy = ((y as f64 / s).round() as usize).min(ny - 1);
        for x in 0..w {
            let ix = ((x as f64 / s).round() as usize).min(nx - 1);
            let k = iy * nx + ix;
            if let Some(f) = smoothed[k] {
                freq.values[y * w + x] = f;
                freq.valid[y * w + x] = true;
            }
            curv.values[y * w + x] = grid_c[k];
        }
    }
    Ok((freq, curv))
}

/// Pixels whose curvature exceeds `threshold` (knots and other anomalies).
pub fn anomaly_mask(curvature: &CurvatureMap, threshold: f64) -> Vec<bool> {
    curvature.values.iter().map(|&c| c > threshold).collect()
}
