//! Phase-based fitting of the distortion texture and ring width, plus the
//! closed-form color map.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gabor::PhaseImage;
use crate::image::{gaussian_smooth, GrayImage, RgbImage};
use crate::model::{frac_to_phase, growth_profile, BoardPose, ColorMap, DistortionTexture, TexelWeights};
use crate::phase::{wrap, wrapped_diff};
use crate::tracer::RingSet;

/// Residuals closer than this to the +-pi cut contribute no gradient.
pub const CUT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Loss mask threshold as a fraction of the mean Gabor magnitude.
    pub loss_mask_mag_min: f64,
    /// Multiplier on the learning rate of the ring width.
    pub s_r_lr_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.03,
            epochs: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss_mask_mag_min: 0.1,
            s_r_lr_scale: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.epochs == 0 {
            return Err(Error::Param("learning_rate must be >= 0 and epochs >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Param("Adam constants need beta in [0, 1) and eps > 0".into()));
        }
        if !(self.s_r_lr_scale >= 0.0) || !(self.loss_mask_mag_min >= 0.0) {
            return Err(Error::Param("s_r_lr_scale and loss_mask_mag_min must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected update; `lr_scale[i]` multiplies the learning rate
    /// of parameter `i` (missing entries count as 1).
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &FitConfig, lr_scale: &[f64]) {
        self.step += 1;
        let b1t = 1.0 - cfg.adam_beta1.powi(self.step as i32);
        let b2t = 1.0 - cfg.adam_beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g;
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            let lr = cfg.learning_rate * lr_scale.get(i).copied().unwrap_or(1.0);
            params[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Mean squared wrapped difference over masked pixels.
pub fn phase_loss(target: &PhaseImage, rendered: &PhaseImage, mask: &[bool]) -> Result<f64> {
    if target.width != rendered.width || target.height != rendered.height || mask.len() != target.phase.len() {
        return Err(Error::Dimension("phase images and mask differ in size".into()));
    }
    let mut n = 0usize;
    let mut s = 0.0;
    for k in 0..mask.len() {
        if mask[k] {
            let d = wrapped_diff(target.phase[k], rendered.phase[k]);
            s += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Insufficient("empty loss mask".into()));
    }
    Ok(s / n as f64)
}

/// Flips the phase of every pixel left of the projected tree axis so phase
/// grows with radius on both sides. Returns whether the axis lies outside
/// the image (left of it nothing is flipped; right of it everything is).
pub fn resolve_phase_sign(phase: &PhaseImage, u_center: f64) -> (PhaseImage, bool) {
    let outside = !(u_center >= 0.0 && u_center <= (phase.width - 1) as f64);
    let mut out = phase.clone();
    for y in 0..phase.height {
        for x in 0..phase.width {
            if (x as f64) < u_center {
                let k = y * phase.width + x;
                out.phase[k] = wrap(-phase.phase[k]);
            }
        }
    }
    (out, outside)
}

/// Fit target: resolved phase shifted so ring boundaries sit at phase 0,
/// which is where the model's phase render puts them.
pub fn boundary_aligned(phase: &PhaseImage, boundary_phase: f64) -> PhaseImage {
    let mut out = phase.clone();
    for p in &mut out.phase {
        *p = wrap(*p - boundary_phase);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub rows: usize,
    pub cols: usize,
    /// Inverse-distance interpolation radius, in ring widths.
    pub idw_radius: f64,
    /// Gaussian smoothing of the interpolated texture, texels.
    pub smooth_sigma: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { rows: 128, cols: 128, idw_radius: 1.5, smooth_sigma: 1.0 }
    }
}

/// Displacement texture that moves each traced ring onto an integer ring
/// coordinate. Each ring gets one index (its median radius rounded, plus a
/// global offset chosen in `-3..=3` by least residual); the per-point
/// displacements are binned to texels, spread by inverse-distance weighting
/// (fading to zero away from samples) and lightly smoothed.
pub fn initial_distortion(rings: &RingSet, pose: &BoardPose, width: usize, height: usize, cfg: &InitConfig) -> Result<DistortionTexture> {
    if rings.rings.len() < 2 {
        return Err(Error::Insufficient(format!("{} rings, need at least 2 for an initial distortion", rings.rings.len())));
    }
    let mut tex = DistortionTexture::for_footprint(pose, width, height, cfg.rows, cfg.cols)?;
    let per_ring: Vec<Vec<(f64, f64)>> =
        rings.rings.iter().map(|r| r.points.iter().map(|p| pose.radius_height(p[0], p[1])).collect()).collect();
    let base: Vec<i64> = per_ring
        .iter()
        .map(|pts| {
            let mut rs: Vec<f64> = pts.iter().map(|p| p.0 / pose.s_r).collect();
            rs.sort_by(|a, b| a.total_cmp(b));
            rs[rs.len() / 2].round() as i64
        })
        .collect();
    if base.iter().all(|&k| k == base[0]) {
        return Err(Error::Insufficient("all rings map to the same ring index".into()));
    }
    let residual = |kappa: i64| -> f64 {
        per_ring
            .iter()
            .zip(&base)
            .flat_map(|(pts, &k)| pts.iter().map(move |p| ((k + kappa) as f64 * pose.s_r - p.0).powi(2)))
            .sum()
    };
    let kappa = (-3..=3i64)
        .map(|k| (residual(k), k.abs(), k))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|t| t.2)
        .unwrap_or(0);

    let (rows, cols) = (tex.rows, tex.cols);
    let dr = tex.r_max / (rows - 1) as f64;
    let dz = tex.z_max / (cols - 1) as f64;
    let mut sum = vec![0.0; rows * cols];
    let mut cnt = vec![0usize; rows * cols];
    for (pts, &k) in per_ring.iter().zip(&base) {
        let target = (k + kappa) as f64 * pose.s_r;
        for &(r, z) in pts {
            let i = ((r / dr).round().max(0.0) as usize).min(rows - 1);
            let j = ((z / dz).round().max(0.0) as usize).min(cols - 1);
            sum[i * cols + j] += target - r;
            cnt[i * cols + j] += 1;
        }
    }
    // Binned samples grouped by row for windowed lookups.
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            if cnt[k] > 0 {
                by_row[i].push((j, sum[k] / cnt[k] as f64));
            }
        }
    }
    let radius = cfg.idw_radius * pose.s_r;
    let wr = (radius / dr).ceil() as usize;
    let wc = (radius / dz).ceil() as usize;
    let prior = 1.0 / (radius * radius);
    let values: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            let (mut num, mut den) = (0.0, prior);
            for ii in i.saturating_sub(wr)..=(i + wr).min(rows - 1) {
                let row = &by_row[ii];
                let start = row.partition_point(|&(jj, _)| jj + wc < j);
                for &(jj, m) in &row[start..] {
                    if jj > j + wc {
                        break;
                    }
                    let d2 = ((ii as f64 - i as f64) * dr).powi(2) + ((jj as f64 - j as f64) * dz).powi(2);
                    if d2 < radius * radius {
                        // Tapered to zero at the radius so the fade to the
                        // zero prior has no step.
                        let taper = (1.0 - d2 / (radius * radius)).powi(2);
                        let w = taper / (d2 + 0.25 * (dr * dr + dz * dz));
                        num += w * m;
                        den += w;
                    }
                }
            }
            num / den
        })
        .collect();
    let grid = GrayImage::from_vec(cols, rows, values)?;
    tex.values = gaussian_smooth(&grid, cfg.smooth_sigma)?.data;
    Ok(tex)
}

/// Per-pixel lookup data for a fixed pose: undistorted radius and texel
/// weights of every masked pixel.
#[derive(Debug, Clone)]
pub struct PixelSet {
    pub index: Vec<usize>,
    pub radius: Vec<f64>,
    pub weights: Vec<TexelWeights>,
    pub target: Vec<f64>,
}

impl PixelSet {
    pub fn new(target: &PhaseImage, mask: &[bool], pose: &BoardPose, tex: &DistortionTexture) -> Result<Self> {
        if mask.len() != target.phase.len() {
            return Err(Error::Dimension("mask and target differ in size".into()));
        }
        let w = target.width;
        let mut set = PixelSet { index: Vec::new(), radius: Vec::new(), weights: Vec::new(), target: Vec::new() };
        for (k, &m) in mask.iter().enumerate() {
            if m && target.valid[k] {
                let (r, z) = pose.radius_height((k % w) as f64, (k / w) as f64);
                set.index.push(k);
                set.radius.push(r);
                set.weights.push(tex.weights(r, z));
                set.target.push(target.phase[k]);
            }
        }
        if set.index.is_empty() {
            return Err(Error::Insufficient("empty loss mask".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Model phase and distorted radius at pixel `n`.
    #[inline]
    fn forward(&self, n: usize, s_r: f64, values: &[f64]) -> (f64, f64) {
        let m: f64 = self.weights[n].iter().map(|&(k, w)| w * values[k]).sum();
        let rp = self.radius[n] + m;
        (frac_to_phase(growth_profile(rp / s_r).1), rp)
    }
}

/// Loss and its gradient with respect to `s_r` and every texel. Per-pixel
/// terms are computed in parallel and summed in pixel order.
pub fn loss_and_gradient(pixels: &PixelSet, s_r: f64, values: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = pixels.len() as f64;
    let terms: Vec<(f64, f64, f64)> = (0..pixels.len())
        .into_par_iter()
        .map(|p| {
            let (phi, rp) = pixels.forward(p, s_r, values);
            let d = wrapped_diff(pixels.target[p], phi);
            // dL/dphi for L = mean d^2 with d = J - phi.
            let g = if d.abs() > PI - CUT_MARGIN { 0.0 } else { -2.0 * d / n };
            (d * d, g, rp)
        })
        .collect();
    let mut loss = 0.0;
    let mut g_sr = 0.0;
    let mut g_tex = vec![0.0; values.len()];
    for (p, &(l, g, rp)) in terms.iter().enumerate() {
        loss += l;
        if g != 0.0 {
            g_sr += g * (-TAU * rp / (s_r * s_r));
            let gt = g * TAU / s_r;
            for &(k, w) in &pixels.weights[p] {
                g_tex[k] += gt * w;
            }
        }
    }
    (loss / n, g_sr, g_tex)
}

/// Loss only.
pub fn loss_at(pixels: &PixelSet, s_r: f64, values: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..pixels.len())
        .into_par_iter()
        .map(|p| {
            let (phi, _) = pixels.forward(p, s_r, values);
            let d = wrapped_diff(pixels.target[p], phi);
            d * d
        })
        .collect();
    terms.iter().sum::<f64>() / pixels.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss at the start of every epoch.
    pub losses: Vec<f64>,
    /// Root of the loss after the last update.
    pub final_rmse: f64,
    pub fold_over: bool,
    pub final_s_r: f64,
}

impl FitReport {
    /// CSV `epoch,loss` followed by `# key = value` summary lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{e},{l}");
        }
        let _ = writeln!(s, "# final_rmse = {}", self.final_rmse);
        let _ = writeln!(s, "# fold_over = {}", self.fold_over);
        let _ = writeln!(s, "# s_r = {}", self.final_s_r);
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Adam over all texels and `s_r`, starting from `pose.s_r` and `init`.
pub fn fit_distortion(
    target: &PhaseImage,
    mask: &[bool],
    pose: &BoardPose,
    init: &DistortionTexture,
    cfg: &FitConfig,
) -> Result<(BoardPose, DistortionTexture, FitReport)> {
    cfg.validate()?;
    let pixels = PixelSet::new(target, mask, pose, init)?;
    let nt = init.values.len();
    let mut params = Vec::with_capacity(nt + 1);
    params.push(pose.s_r);
    params.extend_from_slice(&init.values);
    let mut lr_scale = vec![1.0; nt + 1];
    lr_scale[0] = cfg.s_r_lr_scale;
    let mut adam = AdamState::new(nt + 1);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut grads = vec![0.0; nt + 1];
    for epoch in 0..cfg.epochs {
        let (loss, g_sr, g_tex) = loss_and_gradient(&pixels, params[0], &params[1..]);
        if !loss.is_finite() || !g_sr.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
        }
        losses.push(loss);
        grads[0] = g_sr;
        grads[1..].copy_from_slice(&g_tex);
        adam.update(&mut params, &grads, cfg, &lr_scale);
        if !(params[0] > 0.0) {
            return Err(Error::Numeric(format!("ring width left the positive range at epoch {epoch}")));
        }
    }
    let final_loss = loss_at(&pixels, params[0], &params[1..]);
    if !final_loss.is_finite() {
        return Err(Error::Numeric("non-finite final loss".into()));
    }
    let tex = DistortionTexture::from_values(init.rows, init.cols, init.r_max, init.z_max, params[1..].to_vec())?;
    let fitted = BoardPose { s_r: params[0], ..*pose };
    let report = FitReport { losses, final_rmse: final_loss.sqrt(), fold_over: tex.has_fold(), final_s_r: params[0] };
    Ok((fitted, tex, report))
}

/// Total bilinear weight each texel receives from the pixel set.
pub fn texel_support(pixels: &PixelSet, n_texels: usize) -> Vec<f64> {
    let mut support = vec![0.0; n_texels];
    for w in &pixels.weights {
        for &(k, wt) in w {
            support[k] += wt;
        }
    }
    support
}

/// Replaces texels whose support is below `min_support` by the nearest
/// supported texel of the same column (radial line), lower row on ties.
/// Columns without any supported texel copy the nearest completed column,
/// lower column on ties. Such texels do not reach the loss, so their fitted
/// values are leftovers of the initial guess; a constant radial extension
/// cannot fold. Returns the number of replaced texels.
pub fn fill_unsupported(tex: &mut DistortionTexture, support: &[f64], min_support: f64) -> usize {
    let (rows, cols) = (tex.rows, tex.cols);
    let ok = |i: usize, j: usize| support[i * cols + j] >= min_support;
    let mut filled = 0;
    let mut done = vec![false; cols];
    for j in 0..cols {
        let rows_ok: Vec<usize> = (0..rows).filter(|&i| ok(i, j)).collect();
        if rows_ok.is_empty() {
            continue;
        }
        done[j] = true;
        for i in 0..rows {
            if ok(i, j) {
                continue;
            }
            let at = rows_ok.partition_point(|&r| r < i);
            let src = match (at.checked_sub(1).map(|a| rows_ok[a]), rows_ok.get(at)) {
                (Some(lo), Some(&hi)) => {
                    if i - lo <= hi - i {
                        lo
                    } else {
                        hi
                    }
                }
                (Some(lo), None) => lo,
                (None, Some(&hi)) => hi,
                (None, None) => unreachable!("column has supported rows"),
            };
            tex.values[i * cols + j] = tex.values[src * cols + j];
            filled += 1;
        }
    }
    let done_cols: Vec<usize> = (0..cols).filter(|&j| done[j]).collect();
    if done_cols.is_empty() {
        return filled;
    }
    for j in 0..cols {
        if done[j] {
            continue;
        }
        let src = *done_cols.iter().min_by_key(|&&c| (c.abs_diff(j), c)).expect("non-empty");
        for i in 0..rows {
            tex.values[i * cols + j] = tex.values[i * cols + src];
        }
        filled += rows;
    }
    filled
}

/// Bin-average color map: each masked pixel adds its color to bin
/// `(ring, floor(frac * samples_per_ring))`, ring clamped to the map. Empty
/// bins take the nearest filled bin of the same ring (lower index on ties),
/// and empty rings the nearest filled ring.
pub fn extract_colormap(
    image: &RgbImage,
    pose: &BoardPose,
    tex: &DistortionTexture,
    n_rings: usize,
    samples_per_ring: usize,
    mask: Option<&[bool]>,
) -> Result<ColorMap> {
    if n_rings == 0 || samples_per_ring == 0 {
        return Err(Error::Param("color map needs at least one ring and one sample".into()));
    }
    let spr = samples_per_ring;
    let mut sum = vec![[0.0; 3]; n_rings * spr];
    let mut cnt = vec![0usize; n_rings * spr];
    for y in 0..image.height {
        for x in 0..image.width {
            let k = y * image.width + x;
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            let u = crate::model::ring_coordinate(pose, tex, x as f64, y as f64);
            let (ring, frac) = growth_profile(u);
            let ring = ring.clamp(0, n_rings as i64 - 1) as usize;
            let j = ((frac * spr as f64).floor() as usize).min(spr - 1);
            let c = image.get(x, y);
            let b = ring * spr + j;
            for ch in 0..3 {
                sum[b][ch] += c[ch];
            }
            cnt[b] += 1;
        }
    }
    let mut rgb: Vec<Option<[f64; 3]>> =
        sum.iter().zip(&cnt).map(|(s, &n)| (n > 0).then(|| s.map(|v| (v / n as f64).clamp(0.0, 1.0)))).collect();
    if rgb.iter().all(Option::is_none) {
        return Err(Error::Insufficient("no pixels fall into any color map bin".into()));
    }
    let nearest = |filled: &[bool], i: usize| -> Option<usize> {
        (0..filled.len()).filter(|&j| filled[j]).min_by_key(|&j| (j.abs_diff(i), j))
    };
    let mut ring_filled = vec![false; n_rings];
    for k in 0..n_rings {
        let row = &rgb[k * spr..(k + 1) * spr];
        let filled: Vec<bool> = row.iter().map(Option::is_some).collect();
        if filled.iter().any(|&f| f) {
            ring_filled[k] = true;
            let fill: Vec<[f64; 3]> = (0..spr).map(|j| row[nearest(&filled, j).expect("ring has a bin")].expect("filled")).collect();
            for (j, c) in fill.into_iter().enumerate() {
                rgb[k * spr + j] = Some(c);
            }
        }
    }
    for k in 0..n_rings {
        if !ring_filled[k] {
            let src = nearest(&ring_filled, k).expect("some ring filled");
            for j in 0..spr {
                rgb[k * spr + j] = rgb[src * spr + j];
            }
        }
    }
    ColorMap::new(n_rings, spr, rgb.into_iter().map(|c| c.expect("filled")).collect())
}

/// A small randomized fitting problem for gradient checks: pose, current
/// texture, and a target rendered from a perturbed texture.
pub fn gradcheck_problem(seed: u64, size: usize) -> Result<(PhaseImage, BoardPose, DistortionTexture)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = BoardPose {
        u_center: rng.random_range(0.2..0.8) * size as f64,
        x_offset: rng.random_range(0.5..2.0),
        scale: rng.random_range(3.0..5.0),
        s_r: rng.random_range(0.8..1.2),
        z_origin: rng.random_range(0.0..0.5),
        sign_ambiguous: true,
    };
    let mut tex = DistortionTexture::for_footprint(&pose, size, size, 12, 10)?;
    for v in &mut tex.values {
        *v = rng.random_range(-0.1..0.1);
    }
    let mut other = tex.clone();
    for v in &mut other.values {
        *v += rng.random_range(-0.15..0.15);
    }
    let target = crate::model::render_phase(&pose, &other, size, size);
    Ok((target, pose, tex))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked_texels: Vec<usize>,
    pub pixels: usize,
}

/// Compares the analytic gradient with central differences for `s_r` and
/// `n_texels` random texels (among those carrying at least half a pixel of
/// bilinear weight). Pixels close to an integer ring coordinate, or whose
/// residual is near the +-pi cut, are excluded.
pub fn grad_check(target: &PhaseImage, pose: &BoardPose, tex: &DistortionTexture, n_texels: usize, seed: u64) -> Result<GradCheck> {
    // Finite-difference steps move U by up to ~1e-3; stay clear of the
    // render discontinuity and of the wrap cut by a margin above that.
    const MARGIN: f64 = 5e-3;
    let mut mask = vec![false; target.phase.len()];
    for (k, m) in mask.iter_mut().enumerate() {
        let (u, v) = ((k % target.width) as f64, (k / target.width) as f64);
        let uu = crate::model::ring_coordinate(pose, tex, u, v);
        let frac = growth_profile(uu).1;
        let d = wrapped_diff(target.phase[k], frac_to_phase(frac));
        *m = target.valid[k] && frac.min(1.0 - frac) > MARGIN && d.abs() < PI - TAU * MARGIN;
    }
    let pixels = PixelSet::new(target, &mask, pose, tex)?;
    let (_, g_sr, g_tex) = loss_and_gradient(&pixels, pose.s_r, &tex.values);
    let mut support = vec![0.0; tex.values.len()];
    for ws in &pixels.weights {
        for &(k, w) in ws {
            support[k] += w;
        }
    }
    let eligible: Vec<usize> = (0..support.len()).filter(|&k| support[k] >= 0.5).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if eligible.len() <= n_texels {
        eligible.clone()
    } else {
        let mut idx: Vec<usize> = sample(&mut rng, eligible.len(), n_texels).into_iter().map(|i| eligible[i]).collect();
        idx.sort_unstable();
        idx
    };
    let rel = |a: f64, n: f64| {
        let den = a.abs().max(n.abs());
        if den == 0.0 {
            0.0
        } else {
            (a - n).abs() / den
        }
    };
    let h = 1e-4 * pose.s_r;
    let num_sr = (loss_at(&pixels, pose.s_r + h, &tex.values) - loss_at(&pixels, pose.s_r - h, &tex.values)) / (2.0 * h);
    let mut worst = rel(g_sr, num_sr);
    let mut vals = tex.values.clone();
    for &k in &chosen {
        let h = 1e-4 * tex.values[k].abs().max(pose.s_r);
        let orig = vals[k];
        vals[k] = orig + h;
        let lp = loss_at(&pixels, pose.s_r, &vals);
        vals[k] = orig - h;
        let lm = loss_at(&pixels, pose.s_r, &vals);
        vals[k] = orig;
        worst = worst.max(rel(g_tex[k], (lp - lm) / (2.0 * h)));
    }
    Ok(GradCheck { max_rel_error: worst, checked_texels: chosen, pixels: pixels.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{render_color, render_phase, ColorLookup, WoodModelParams};
    use crate::tracer::RingTrace;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> PhaseImage {
        PhaseImage::from_fn(w, h, f)
    }

    #[test]
    fn loss_examples() {
        let a = img(5, 2, |x, y| (x + 3 * y) as f64 * 0.4);
        assert_eq!(phase_loss(&a, &a, &[true; 10]).unwrap(), 0.0);
        let mut b = a.clone();
        b.phase.iter_mut().for_each(|p| *p += TAU);
        assert!(phase_loss(&a, &b, &[true; 10]).unwrap() < 1e-24);
        let j = img(5, 2, |_, _| 0.0);
        let i = img(5, 2, |_, _| 0.3);
        assert!((phase_loss(&j, &i, &[true; 10]).unwrap() - 0.09).abs() < 1e-15);
        assert!(phase_loss(&j, &i, &[false; 10]).is_err());
    }

    #[test]
    fn sign_resolution() {
        let ph = img(10, 3, |x, _| x as f64 * 0.5 - 1.0);
        let (out, outside) = resolve_phase_sign(&ph, -4.0);
        assert!(outside);
        assert_eq!(out, ph);
        let (once, outside) = resolve_phase_sign(&ph, 4.5);
        assert!(!outside);
        let (twice, _) = resolve_phase_sign(&once, 4.5);
        assert_eq!(twice, ph);
        assert_eq!(once.phase[3], wrap(-ph.phase[3]));
        assert_eq!(once.phase[7], ph.phase[7]);
    }

    #[test]
    fn resolved_phase_is_symmetric_about_the_axis() {
        // Raw Gabor phase of a tangential cut mirrors across the axis.
        let pose = BoardPose { u_center: 40.0, x_offset: 1.3, scale: 6.0, s_r: 1.0, z_origin: 0.0, sign_ambiguous: true };
        let tex = DistortionTexture::zeros(8, 8, 20.0, 20.0).unwrap();
        let model = render_phase(&pose, &tex, 81, 4);
        let raw = img(81, 4, |x, y| {
            let p = model.phase[y * 81 + x];
            if (x as f64) < 40.0 {
                -p
            } else {
                p
            }
        });
        let (res, _) = resolve_phase_sign(&raw, 40.0);
        for d in 1..40 {
            assert!(wrapped_diff(res.phase[40 + d], res.phase[40 - d]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_with_zero_rate_is_identity() {
        let cfg = FitConfig { learning_rate: 0.0, ..FitConfig::default() };
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        let mut st = AdamState::new(3);
        for _ in 0..500 {
            st.update(&mut p, &[0.3, -1.0, 2.0], &cfg, &[]);
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = FitConfig::default();
        let mut p = vec![1.0, 1.0];
        let mut st = AdamState::new(2);
        st.update(&mut p, &[2.0, -0.001], &cfg, &[1.0, 0.5]);
        assert!((p[0] - (1.0 - 0.03)).abs() < 1e-8);
        assert!((p[1] - (1.0 + 0.015)).abs() < 1e-6);
    }

    fn pose() -> BoardPose {
        BoardPose { u_center: 30.0, x_offset: 1.5, scale: 8.0, s_r: 1.0, z_origin: 0.2, sign_ambiguous: true }
    }

    #[test]
    fn fit_from_exact_model_stays_put() {
        let p = pose();
        let tex = DistortionTexture::from_fn(16, 16, 10.0, 10.0, |r, z| 0.1 * (r + 0.5 * z).sin()).unwrap();
        let target = render_phase(&p, &tex, 64, 40);
        let cfg = FitConfig { epochs: 20, ..FitConfig::default() };
        let (q, t, rep) = fit_distortion(&target, &vec![true; 64 * 40], &p, &tex, &cfg).unwrap();
        assert!(rep.losses.iter().all(|&l| l == 0.0));
        assert_eq!(q.s_r, p.s_r);
        assert!(t.values.iter().zip(&tex.values).all(|(a, b)| (a - b).abs() < 1e-7));
        assert_eq!(rep.losses.len(), 20);
    }

    #[test]
    fn zero_rate_fit_leaves_params_unchanged() {
        let p = pose();
        let tex = DistortionTexture::zeros(16, 16, 10.0, 10.0).unwrap();
        let truth = DistortionTexture::from_fn(16, 16, 10.0, 10.0, |r, _| 0.1 * r.sin()).unwrap();
        let target = render_phase(&p, &truth, 64, 40);
        let cfg = FitConfig { learning_rate: 0.0, ..FitConfig::default() };
        let (q, t, rep) = fit_distortion(&target, &vec![true; 64 * 40], &p, &tex, &cfg).unwrap();
        assert_eq!(rep.losses.len(), 500);
        assert_eq!(q, p);
        assert_eq!(t, tex);
    }

    #[test]
    fn fit_recovers_a_constant_shift() {
        let p = pose();
        let tex = DistortionTexture::zeros(16, 16, 10.0, 10.0).unwrap();
        let truth = DistortionTexture::from_values(16, 16, 10.0, 10.0, vec![0.2; 256]).unwrap();
        let target = render_phase(&p, &truth, 64, 40);
        let cfg = FitConfig { s_r_lr_scale: 0.0, epochs: 300, ..FitConfig::default() };
        let (_, _, rep) = fit_distortion(&target, &vec![true; 64 * 40], &p, &tex, &cfg).unwrap();
        assert!(rep.final_rmse < 0.05, "{}", rep.final_rmse);
        assert!(rep.losses[299] < 0.05 * rep.losses[0]);
        assert!(!rep.fold_over);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (target, pose, tex) = gradcheck_problem(seed, 16).unwrap();
            let gc = grad_check(&target, &pose, &tex, 32, seed).unwrap();
            assert!(gc.max_rel_error < 1e-4, "seed {seed}: {}", gc.max_rel_error);
            assert!(gc.checked_texels.len() >= 16 && gc.pixels > 100);
        }
    }

    #[test]
    fn global_shift_of_both_phases_has_no_effect() {
        let (target, pose, tex) = gradcheck_problem(3, 16).unwrap();
        let rendered = render_phase(&pose, &tex, 16, 16);
        let mask = vec![true; 256];
        let base = phase_loss(&target, &rendered, &mask).unwrap();
        for c in [0.5, -2.0, 3.0] {
            let shift = |p: &PhaseImage| {
                let mut q = p.clone();
                q.phase.iter_mut().for_each(|v| *v = wrap(*v + c));
                q
            };
            assert!((phase_loss(&shift(&target), &shift(&rendered), &mask).unwrap() - base).abs() < 1e-12);
        }
    }

    fn vertical_rings(pose: &BoardPose, width: usize, height: usize, shift: f64) -> RingSet {
        let mut rings = Vec::new();
        for k in 1..20 {
            let k = k as f64;
            if k + shift <= pose.x_offset {
                continue;
            }
            // Ring k sits where r = k - shift, i.e. m_r = shift.
            let d = pose.scale * ((k - shift).powi(2) - pose.x_offset.powi(2)).sqrt();
            for u in [pose.u_center - d, pose.u_center + d] {
                if u >= 0.0 && u <= width as f64 - 1.0 {
                    rings.push(RingTrace { points: (0..height).map(|v| [u, v as f64]).collect(), closed: false, seed_magnitude: 1.0 });
                }
            }
        }
        RingSet { rings }
    }

    #[test]
    fn initial_guess_of_exact_rings_is_zero() {
        let p = BoardPose { z_origin: 0.0, ..pose() };
        let rings = vertical_rings(&p, 64, 40, 0.0);
        let tex = initial_distortion(&rings, &p, 64, 40, &InitConfig { rows: 64, cols: 32, ..InitConfig::default() }).unwrap();
        assert!(tex.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn initial_guess_of_shifted_rings_is_constant() {
        let p = BoardPose { z_origin: 0.0, ..pose() };
        let rings = vertical_rings(&p, 64, 40, 0.2);
        let tex = initial_distortion(&rings, &p, 64, 40, &InitConfig { rows: 64, cols: 32, ..InitConfig::default() }).unwrap();
        // Every pixel of the footprint sees +0.2.
        for v in (0..40).step_by(3) {
            for u in (0..64).step_by(3) {
                let (r, z) = p.radius_height(u as f64, v as f64);
                let m = tex.sample(r, z);
                assert!((m - 0.2).abs() < 0.03, "({u},{v}) m = {m}");
            }
        }
    }

    #[test]
    fn initial_guess_needs_two_rings() {
        let p = pose();
        let rings = RingSet { rings: vertical_rings(&p, 64, 40, 0.0).rings.into_iter().take(1).collect() };
        assert!(initial_distortion(&rings, &p, 64, 40, &InitConfig::default()).is_err());
    }

    #[test]
    fn colormap_round_trip_and_fill() {
        // Footprint reaches every bin of a 4-ring map.
        let p = BoardPose { u_center: 32.0, x_offset: 0.0, ..pose() };
        let tex = DistortionTexture::from_fn(16, 16, 10.0, 10.0, |r, z| 0.05 * (r - z).cos()).unwrap();
        let rgb: Vec<[f64; 3]> = (0..4 * 4).map(|i| [(i as f64 * 0.37) % 1.0, (i as f64 * 0.11) % 1.0, 0.5]).collect();
        let cm = ColorMap::new(4, 4, rgb).unwrap();
        let params = WoodModelParams::new(p, tex.clone(), cm.clone()).unwrap();
        let img = render_color(&params, 64, 40, ColorLookup::Nearest);
        let back = extract_colormap(&img, &p, &tex, 4, 4, None).unwrap();
        for (a, b) in back.rgb.iter().zip(&cm.rgb) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-6);
            }
        }
        let gray = RgbImage::from_gray(&GrayImage::filled(64, 40, 0.4));
        let back = extract_colormap(&gray, &p, &tex, 6, 4, None).unwrap();
        assert!(back.rgb.iter().flatten().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn empty_ring_takes_the_nearest() {
        let p = BoardPose { u_center: 0.0, x_offset: 0.0, scale: 10.0, s_r: 1.0, z_origin: 0.0, sign_ambiguous: false };
        let tex = DistortionTexture::zeros(4, 4, 10.0, 10.0).unwrap();
        // Pixels only in rings 0 and 2.
        let mut img = RgbImage::new(30, 1);
        let mut mask = vec![false; 30];
        for x in 0..30 {
            let ring = x / 10;
            img.set(x, 0, [ring as f64 / 4.0; 3]);
            mask[x] = ring != 1;
        }
        let cm = extract_colormap(&img, &p, &tex, 3, 1, Some(&mask)).unwrap();
        assert_eq!(cm.get(1, 0), cm.get(0, 0));
        assert_eq!(cm.get(2, 0), [0.5; 3]);
        assert!(extract_colormap(&img, &p, &tex, 3, 1, Some(&[false; 30])).is_err());
    }
}
