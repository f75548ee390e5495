//! Stage orchestration: detection, location and fitting of one image.

use crate::error::{Error, Result};
use crate::fit::{
    boundary_aligned, extract_colormap, fill_unsupported, fit_distortion, initial_distortion, loss_at, resolve_phase_sign, texel_support,
    FitConfig, FitReport, InitConfig, PixelSet,
};
use crate::frequency::{estimate_maps, MapConfig};
use crate::gabor::{filter_image, phase_magnitude, refined_orientation, GaborConfig, PhaseImage};
use crate::image::{gaussian_smooth, resize_to_width, scharr_gradient, GrayImage, RgbImage};
use crate::locate::{locate_board, LocateConfig, LocateReport};
use crate::model::{growth_profile, ring_coordinate, BoardPose, DistortionTexture, WoodModelParams};
use crate::orientation::orientation_field;
use crate::tracer::{dedup_rings, mean_magnitude, trace_rings, RingSet, TracerConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub smooth_sigma: f64,
    pub orient_window_w: usize,
    pub orient_window_h: usize,
    pub maps: MapConfig,
    pub gabor: GaborConfig,
    /// Window of the orientation field computed from the Gabor phase.
    pub refine_window: usize,
    pub tracer: TracerConfig,
    /// Width of the band around the tree axis ignored by the final trace,
    /// in ring widths of undistorted ring coordinate (see `vertex_band`).
    pub vertex_band: f64,
    /// Rescale the input to this width before filtering (0 keeps it).
    /// Ring coordinates are reported in input pixels either way.
    pub resize_width: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let gabor = GaborConfig::default();
        Self {
            smooth_sigma: 1.0,
            orient_window_w: 15,
            orient_window_h: 15,
            maps: MapConfig { p: gabor.p, q: gabor.q, stride: 16, band: Default::default(), axis: gabor.axis },
            gabor,
            refine_window: 7,
            tracer: TracerConfig::default(),
            vertex_band: 0.06,
            resize_width: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// Gabor phase as filtered (sign not yet resolved).
    pub phase: PhaseImage,
    pub magnitude: GrayImage,
    /// Axis estimate used to resolve the phase sign before the final trace.
    pub rough_center: Option<f64>,
    pub rings: RingSet,
    pub warnings: Vec<String>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Param(m) => Error::Param(format!("{name}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("{name}: {m}")),
        Error::Insufficient(m) => Error::Insufficient(format!("{name}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{name}: {m}")),
        other => other,
    })
}

/// Gabor phase and magnitude of a gray image.
pub fn filter(img: &GrayImage, cfg: &DetectConfig) -> Result<(PhaseImage, GrayImage)> {
    let smooth = stage("smoothing", gaussian_smooth(img, cfg.smooth_sigma))?;
    let (gx, gy) = stage("gradient", scharr_gradient(&smooth))?;
    let orient = stage("orientation", orientation_field(&gx, &gy, cfg.orient_window_w, cfg.orient_window_h))?;
    let (freq, _) = stage("frequency", estimate_maps(img, &orient, &cfg.maps))?;
    let resp = stage("gabor", filter_image(img, &orient, &freq, &cfg.gabor))?;
    Ok(phase_magnitude(&resp))
}

/// Filters, traces and deduplicates rings.
///
/// Boundaries sit at `boundary_phase` on one side of the tree axis and at
/// its negative on the other, so the first pass traces both level sets. Their
/// union is symmetric about the axis, which makes it a sound input for a
/// rough axis estimate; the phase is then sign-resolved around that axis and
/// traced again at `boundary_phase` alone.
pub fn detect(img: &GrayImage, cfg: &DetectConfig, locate: &LocateConfig) -> Result<Detection> {
    let (work, factor) = if cfg.resize_width > 0 && cfg.resize_width != img.width {
        let r = stage("resize", resize_to_width(img, cfg.resize_width))?;
        let f = img.width as f64 / r.width as f64;
        (r, f)
    } else {
        (img.clone(), 1.0)
    };
    let (phase, magnitude) = filter(&work, cfg)?;
    let orient = stage("orientation", refined_orientation(&phase, cfg.refine_window, cfg.refine_window))?;
    let mut warnings = Vec::new();
    let t = cfg.tracer;
    let pos = stage("tracing", trace_rings(&phase, &magnitude, &orient, &t))?;
    let neg = stage("tracing", trace_rings(&phase, &magnitude, &orient, &TracerConfig { boundary_phase: -t.boundary_phase, ..t }))?;
    let reference = (work.height as f64 - 1.0) / 2.0;
    let union = dedup_rings(pos.rings.iter().chain(&neg.rings).cloned().collect(), t.min_separation, reference);
    let retrace = |pose: &BoardPose| {
        let (mut resolved, _) = resolve_phase_sign(&phase, pose.u_center);
        for (valid, near) in resolved.valid.iter_mut().zip(vertex_band(pose, work.width, work.height, cfg.vertex_band)) {
            *valid &= !near;
        }
        stage("tracing", trace_rings(&resolved, &magnitude, &orient, &t))
    };
    let rough = locate_board(&union, work.height, locate).ok().map(|(p, _)| p);
    let mut rough_center = rough.map(|p| p.u_center);
    let mut rings = match rough {
        Some(pose) => {
            let mut rings = retrace(&pose)?;
            // A second pass around the axis located from the resolved trace.
            if let Ok((again, _)) = locate_board(&rings, work.height, locate) {
                if (again.u_center - pose.u_center).abs() > 1.0 {
                    rings = retrace(&again)?;
                    rough_center = Some(again.u_center);
                }
            }
            rings
        }
        None => {
            if !union.rings.is_empty() {
                warnings.push("no tree axis estimate; phase sign left unresolved".into());
            }
            pos
        }
    };
    if rings.rings.is_empty() {
        warnings.push("no rings detected".into());
    }
    if factor != 1.0 {
        for r in &mut rings.rings {
            for p in &mut r.points {
                p[0] *= factor;
                p[1] *= factor;
            }
        }
    }
    Ok(Detection { phase, magnitude, rough_center: rough_center.map(|u| u * factor), rings, warnings })
}

/// Pixels near the ring vertices: those whose undistorted ring coordinate
/// exceeds its value on the axis by less than `band` ring widths. Rings are
/// flat across the axis there, so the filter sees almost no radial change
/// and its phase is unreliable; sign resolution also leaves a seam at the
/// axis itself.
pub fn vertex_band(pose: &BoardPose, width: usize, height: usize, band: f64) -> Vec<bool> {
    let x = pose.x_offset.abs();
    let row: Vec<bool> = (0..width)
        .map(|u| {
            let d = (u as f64 - pose.u_center) / pose.scale;
            (x * x + d * d).sqrt() - x < band * pose.s_r
        })
        .collect();
    (0..height).flat_map(|_| row.iter().copied()).collect()
}

/// Pose from detected rings; needs at least three scanline crossings.
pub fn locate(rings: &RingSet, height: usize, cfg: &LocateConfig) -> Result<(BoardPose, LocateReport)> {
    stage("locate", locate_board(rings, height, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStageConfig {
    pub init: InitConfig,
    pub fit: FitConfig,
    pub samples_per_ring: usize,
    pub boundary_phase: f64,
    /// Pixels within this band around the axis are left out of the loss
    /// (see `vertex_band`). Wider than the tracing band: the phase bias near
    /// the vertices reaches further than spurious boundary crossings do.
    pub vertex_band: f64,
    /// Texels with less total pixel weight than this are completed from
    /// their radial neighbours after the fit.
    pub min_texel_support: f64,
}

impl Default for FitStageConfig {
    fn default() -> Self {
        Self {
            init: InitConfig::default(),
            fit: FitConfig::default(),
            samples_per_ring: 16,
            boundary_phase: TracerConfig::default().boundary_phase,
            vertex_band: 0.15,
            min_texel_support: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: WoodModelParams,
    pub initial: DistortionTexture,
    pub report: FitReport,
    /// Phase the model was fitted to (sign resolved, boundaries at 0).
    pub target: PhaseImage,
    pub mask: Vec<bool>,
    /// The tree axis lies outside the image.
    pub center_outside: bool,
}

/// Pixels whose Gabor phase is valid and whose magnitude reaches
/// `frac` times the mean magnitude.
pub fn loss_mask(phase: &PhaseImage, magnitude: &GrayImage, frac: f64) -> Vec<bool> {
    let min = frac * mean_magnitude(phase, magnitude);
    phase.valid.iter().zip(&magnitude.data).map(|(&v, &m)| v && m >= min && m > 0.0).collect()
}

/// Number of color map rings needed to cover the image.
pub fn rings_covering(pose: &BoardPose, tex: &DistortionTexture, width: usize, height: usize) -> usize {
    let mut u_max = 0.0f64;
    for v in [0.0, (height - 1) as f64] {
        for u in [0.0, (width - 1) as f64, pose.u_center.clamp(0.0, (width - 1) as f64)] {
            u_max = u_max.max(ring_coordinate(pose, tex, u, v));
        }
    }
    (growth_profile(u_max).0.max(0) as usize + 1).max(1)
}

/// Initial guess, sign resolution, Adam fit and color map extraction.
pub fn fit(rgb: &RgbImage, detection: &Detection, pose: &BoardPose, cfg: &FitStageConfig) -> Result<FitOutput> {
    let (w, h) = (rgb.width, rgb.height);
    if detection.phase.width != w || detection.phase.height != h {
        return Err(Error::Dimension("fit: detection was run at a different resolution".into()));
    }
    let initial = stage("initial guess", initial_distortion(&detection.rings, pose, w, h, &cfg.init))?;
    let (resolved, center_outside) = resolve_phase_sign(&detection.phase, pose.u_center);
    let target = boundary_aligned(&resolved, cfg.boundary_phase);
    let near = vertex_band(pose, w, h, cfg.vertex_band);
    let mask: Vec<bool> =
        loss_mask(&detection.phase, &detection.magnitude, cfg.fit.loss_mask_mag_min).into_iter().zip(near).map(|(m, n)| m && !n).collect();
    let (fitted, mut tex, mut report) = stage("fit", fit_distortion(&target, &mask, pose, &initial, &cfg.fit))?;
    let pixels = PixelSet::new(&target, &mask, &fitted, &tex)?;
    let support = texel_support(&pixels, tex.values.len());
    if fill_unsupported(&mut tex, &support, cfg.min_texel_support) > 0 {
        report.final_rmse = loss_at(&pixels, fitted.s_r, &tex.values).sqrt();
        report.fold_over = tex.has_fold();
    }
    let n_rings = rings_covering(&fitted, &tex, w, h);
    let colormap = stage("color map", extract_colormap(rgb, &fitted, &tex, n_rings, cfg.samples_per_ring, None))?;
    let params = WoodModelParams::new(fitted, tex, colormap)?;
    Ok(FitOutput { params, initial, report, target, mask, center_outside })
}

/// RMS of the ring-coordinate difference between two models over a pixel
/// set, in ring widths of `truth`, after removing the global integer ring
/// offset (which phase cannot observe).
pub fn ring_coordinate_rms(
    fit_pose: &BoardPose,
    fit_tex: &DistortionTexture,
    truth_pose: &BoardPose,
    truth_tex: &DistortionTexture,
    width: usize,
    mask: &[bool],
) -> f64 {
    let diffs: Vec<f64> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(k, _)| {
            let (u, v) = ((k % width) as f64, (k / width) as f64);
            ring_coordinate(fit_pose, fit_tex, u, v) - ring_coordinate(truth_pose, truth_tex, u, v)
        })
        .collect();
    if diffs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = diffs.clone();
    sorted.sort_by(f64::total_cmp);
    let offset = sorted[sorted.len() / 2].round();
    (diffs.iter().map(|d| (d - offset).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt()
}
