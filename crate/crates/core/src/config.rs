//! Flat key-value configuration covering every tunable stage parameter.
//!
//! Keys map one to one onto the stage config structs. Unknown keys are
//! rejected and every value is checked against its stage's preconditions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::locate::LocateConfig;
use crate::pipeline::{DetectConfig, FitStageConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub detect: DetectConfig,
    pub locate: LocateConfig,
    pub fit: FitStageConfig,
    /// Match distance for ring scoring, px.
    pub eval_threshold: f64,
    /// Smoothing of the latewood series, rings.
    pub latewood_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            locate: LocateConfig::default(),
            fit: FitStageConfig::default(),
            eval_threshold: 3.0,
            latewood_sigma: 1.0,
        }
    }
}

/// Every accepted key, in the order `to_kv` writes them.
pub const KEYS: &[&str] = &[
    "smooth_sigma",
    "orient_window_w",
    "orient_window_h",
    "map_p",
    "map_q",
    "map_stride",
    "f_min",
    "f_max",
    "min_prominence",
    "gabor_p",
    "gabor_q",
    "gabor_stride",
    "axis_x",
    "axis_y",
    "refine_window",
    "trace_step",
    "trace_tol",
    "mag_min_frac",
    "gap_max",
    "max_steps",
    "min_separation",
    "min_points",
    "boundary_phase",
    "detect_vertex_band",
    "resize_width",
    "pose_x_half_range",
    "pose_x_step",
    "pose_scale_rel_range",
    "pose_scale_rel_step",
    "pose_refine_levels",
    "pose_max_points",
    "scan_rows",
    "max_inner_ring",
    "pose_candidates",
    "init_rows",
    "init_cols",
    "idw_radius",
    "init_smooth_sigma",
    "learning_rate",
    "epochs",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "loss_mask_mag_min",
    "s_r_lr_scale",
    "samples_per_ring",
    "fit_vertex_band",
    "min_texel_support",
    "eval_threshold",
    "latewood_sigma",
];

fn check(ok: bool, key: &str, rule: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Param(format!("{key}: {rule}")))
    }
}

impl PipelineConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(KEYS)?;
        let d = Self::default();
        let mut c = d;
        let det = &mut c.detect;
        det.smooth_sigma = kv.opt("smooth_sigma", d.detect.smooth_sigma)?;
        det.orient_window_w = kv.opt("orient_window_w", d.detect.orient_window_w)?;
        det.orient_window_h = kv.opt("orient_window_h", d.detect.orient_window_h)?;
        det.maps.p = kv.opt("map_p", d.detect.maps.p)?;
        det.maps.q = kv.opt("map_q", d.detect.maps.q)?;
        det.maps.stride = kv.opt("map_stride", d.detect.maps.stride)?;
        det.maps.band.f_min = kv.opt("f_min", d.detect.maps.band.f_min)?;
        det.maps.band.f_max = kv.opt("f_max", d.detect.maps.band.f_max)?;
        det.maps.band.min_prominence = kv.opt("min_prominence", d.detect.maps.band.min_prominence)?;
        det.gabor.p = kv.opt("gabor_p", d.detect.gabor.p)?;
        det.gabor.q = kv.opt("gabor_q", d.detect.gabor.q)?;
        det.gabor.stride = kv.opt("gabor_stride", d.detect.gabor.stride)?;
        let axis = [kv.opt("axis_x", d.detect.gabor.axis[0])?, kv.opt("axis_y", d.detect.gabor.axis[1])?];
        det.gabor.axis = axis;
        det.maps.axis = axis;
        det.refine_window = kv.opt("refine_window", d.detect.refine_window)?;
        let t = &mut det.tracer;
        t.step = kv.opt("trace_step", d.detect.tracer.step)?;
        t.tol = kv.opt("trace_tol", d.detect.tracer.tol)?;
        t.mag_min_frac = kv.opt("mag_min_frac", d.detect.tracer.mag_min_frac)?;
        t.gap_max = kv.opt("gap_max", d.detect.tracer.gap_max)?;
        // 0 selects the perimeter-based default.
        let max_steps: usize = kv.opt("max_steps", d.detect.tracer.max_steps.unwrap_or(0))?;
        t.max_steps = (max_steps > 0).then_some(max_steps);
        t.min_separation = kv.opt("min_separation", d.detect.tracer.min_separation)?;
        t.min_points = kv.opt("min_points", d.detect.tracer.min_points)?;
        t.boundary_phase = kv.opt("boundary_phase", d.detect.tracer.boundary_phase)?;
        det.vertex_band = kv.opt("detect_vertex_band", d.detect.vertex_band)?;
        det.resize_width = kv.opt("resize_width", d.detect.resize_width)?;

        let g = &mut c.locate.grid;
        g.x_half_range = kv.opt("pose_x_half_range", d.locate.grid.x_half_range)?;
        g.x_step = kv.opt("pose_x_step", d.locate.grid.x_step)?;
        g.scale_rel_range = kv.opt("pose_scale_rel_range", d.locate.grid.scale_rel_range)?;
        g.scale_rel_step = kv.opt("pose_scale_rel_step", d.locate.grid.scale_rel_step)?;
        g.refine_levels = kv.opt("pose_refine_levels", d.locate.grid.refine_levels)?;
        g.max_points = kv.opt("pose_max_points", d.locate.grid.max_points)?;
        c.locate.scan_rows = kv.opt("scan_rows", d.locate.scan_rows)?;
        c.locate.max_inner_ring = kv.opt("max_inner_ring", d.locate.max_inner_ring)?;
        c.locate.candidates = kv.opt("pose_candidates", d.locate.candidates)?;

        let f = &mut c.fit;
        f.init.rows = kv.opt("init_rows", d.fit.init.rows)?;
        f.init.cols = kv.opt("init_cols", d.fit.init.cols)?;
        f.init.idw_radius = kv.opt("idw_radius", d.fit.init.idw_radius)?;
        f.init.smooth_sigma = kv.opt("init_smooth_sigma", d.fit.init.smooth_sigma)?;
        f.fit.learning_rate = kv.opt("learning_rate", d.fit.fit.learning_rate)?;
        f.fit.epochs = kv.opt("epochs", d.fit.fit.epochs)?;
        f.fit.adam_beta1 = kv.opt("adam_beta1", d.fit.fit.adam_beta1)?;
        f.fit.adam_beta2 = kv.opt("adam_beta2", d.fit.fit.adam_beta2)?;
        f.fit.adam_eps = kv.opt("adam_eps", d.fit.fit.adam_eps)?;
        f.fit.loss_mask_mag_min = kv.opt("loss_mask_mag_min", d.fit.fit.loss_mask_mag_min)?;
        f.fit.s_r_lr_scale = kv.opt("s_r_lr_scale", d.fit.fit.s_r_lr_scale)?;
        f.samples_per_ring = kv.opt("samples_per_ring", d.fit.samples_per_ring)?;
        f.boundary_phase = c.detect.tracer.boundary_phase;
        f.vertex_band = kv.opt("fit_vertex_band", d.fit.vertex_band)?;
        f.min_texel_support = kv.opt("min_texel_support", d.fit.min_texel_support)?;

        c.eval_threshold = kv.opt("eval_threshold", d.eval_threshold)?;
        c.latewood_sigma = kv.opt("latewood_sigma", d.latewood_sigma)?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    /// Every key with its current value; `from_kv` of the result gives
    /// back `self`.
    pub fn to_kv(&self) -> KvFile {
        let (det, t, g, f) = (&self.detect, &self.detect.tracer, &self.locate.grid, &self.fit);
        let mut kv = KvFile::new();
        kv.set("smooth_sigma", det.smooth_sigma);
        kv.set("orient_window_w", det.orient_window_w);
        kv.set("orient_window_h", det.orient_window_h);
        kv.set("map_p", det.maps.p);
        kv.set("map_q", det.maps.q);
        kv.set("map_stride", det.maps.stride);
        kv.set("f_min", det.maps.band.f_min);
        kv.set("f_max", det.maps.band.f_max);
        kv.set("min_prominence", det.maps.band.min_prominence);
        kv.set("gabor_p", det.gabor.p);
        kv.set("gabor_q", det.gabor.q);
        kv.set("gabor_stride", det.gabor.stride);
        kv.set("axis_x", det.gabor.axis[0]);
        kv.set("axis_y", det.gabor.axis[1]);
        kv.set("refine_window", det.refine_window);
        kv.set("trace_step", t.step);
        kv.set("trace_tol", t.tol);
        kv.set("mag_min_frac", t.mag_min_frac);
        kv.set("gap_max", t.gap_max);
        kv.set("max_steps", t.max_steps.unwrap_or(0));
        kv.set("min_separation", t.min_separation);
        kv.set("min_points", t.min_points);
        kv.set("boundary_phase", t.boundary_phase);
        kv.set("detect_vertex_band", det.vertex_band);
        kv.set("resize_width", det.resize_width);
        kv.set("pose_x_half_range", g.x_half_range);
        kv.set("pose_x_step", g.x_step);
        kv.set("pose_scale_rel_range", g.scale_rel_range);
        kv.set("pose_scale_rel_step", g.scale_rel_step);
        kv.set("pose_refine_levels", g.refine_levels);
        kv.set("pose_max_points", g.max_points);
        kv.set("scan_rows", self.locate.scan_rows);
        kv.set("max_inner_ring", self.locate.max_inner_ring);
        kv.set("pose_candidates", self.locate.candidates);
        kv.set("init_rows", f.init.rows);
        kv.set("init_cols", f.init.cols);
        kv.set("idw_radius", f.init.idw_radius);
        kv.set("init_smooth_sigma", f.init.smooth_sigma);
        kv.set("learning_rate", f.fit.learning_rate);
        kv.set("epochs", f.fit.epochs);
        kv.set("adam_beta1", f.fit.adam_beta1);
        kv.set("adam_beta2", f.fit.adam_beta2);
        kv.set("adam_eps", f.fit.adam_eps);
        kv.set("loss_mask_mag_min", f.fit.loss_mask_mag_min);
        kv.set("s_r_lr_scale", f.fit.s_r_lr_scale);
        kv.set("samples_per_ring", f.samples_per_ring);
        kv.set("fit_vertex_band", f.vertex_band);
        kv.set("min_texel_support", f.min_texel_support);
        kv.set("eval_threshold", self.eval_threshold);
        kv.set("latewood_sigma", self.latewood_sigma);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let (det, t, g, f) = (&self.detect, &self.detect.tracer, &self.locate.grid, &self.fit);
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        check(finite_nonneg(det.smooth_sigma), "smooth_sigma", "must be >= 0")?;
        check(det.orient_window_w >= 1 && det.orient_window_h >= 1, "orient_window_w/h", "must be >= 1")?;
        check(det.maps.p >= 1 && det.maps.q >= 1, "map_p/map_q", "must be >= 1")?;
        check(det.maps.stride >= 1, "map_stride", "must be >= 1")?;
        let band = det.maps.band;
        check(pos(band.f_min) && band.f_min < band.f_max && band.f_max <= 0.5, "f_min/f_max", "need 0 < f_min < f_max <= 0.5")?;
        check(finite_nonneg(band.min_prominence) && band.min_prominence < 1.0, "min_prominence", "must lie in [0, 1)")?;
        check(det.gabor.p >= 1 && det.gabor.q >= 1, "gabor_p/gabor_q", "must be >= 1")?;
        check(det.gabor.stride >= 1, "gabor_stride", "must be >= 1")?;
        let a = det.gabor.axis;
        check(a[0].is_finite() && a[1].is_finite() && (a[0] != 0.0 || a[1] != 0.0), "axis_x/axis_y", "must be a finite non-zero vector")?;
        check(det.refine_window >= 1, "refine_window", "must be >= 1")?;
        check(pos(t.step), "trace_step", "must be > 0")?;
        check(pos(t.tol), "trace_tol", "must be > 0")?;
        check(finite_nonneg(t.mag_min_frac), "mag_min_frac", "must be >= 0")?;
        check(finite_nonneg(t.min_separation), "min_separation", "must be >= 0")?;
        check(t.min_points >= 2, "min_points", "must be >= 2")?;
        check(t.boundary_phase.is_finite() && t.boundary_phase.abs() <= std::f64::consts::PI, "boundary_phase", "must lie in [-pi, pi]")?;
        check(finite_nonneg(det.vertex_band), "detect_vertex_band", "must be >= 0")?;
        check(det.resize_width == 0 || det.resize_width >= 3, "resize_width", "must be 0 (off) or >= 3")?;
        check(pos(g.x_half_range) && pos(g.x_step), "pose_x_half_range/pose_x_step", "must be > 0")?;
        check(pos(g.scale_rel_range) && pos(g.scale_rel_step), "pose_scale_rel_range/pose_scale_rel_step", "must be > 0")?;
        check(g.scale_rel_range < 1.0, "pose_scale_rel_range", "must be < 1")?;
        check(g.max_points >= 1, "pose_max_points", "must be >= 1")?;
        check(self.locate.scan_rows >= 1, "scan_rows", "must be >= 1")?;
        check(self.locate.max_inner_ring >= 1, "max_inner_ring", "must be >= 1")?;
        check(self.locate.candidates >= 1, "pose_candidates", "must be >= 1")?;
        check(f.init.rows >= 2 && f.init.cols >= 2, "init_rows/init_cols", "must be >= 2")?;
        check(pos(f.init.idw_radius), "idw_radius", "must be > 0")?;
        check(finite_nonneg(f.init.smooth_sigma), "init_smooth_sigma", "must be >= 0")?;
        f.fit.validate()?;
        check(f.samples_per_ring >= 1, "samples_per_ring", "must be >= 1")?;
        check(finite_nonneg(f.vertex_band), "fit_vertex_band", "must be >= 0")?;
        check(finite_nonneg(f.min_texel_support), "min_texel_support", "must be >= 0")?;
        check(pos(self.eval_threshold), "eval_threshold", "must be > 0")?;
        check(finite_nonneg(self.latewood_sigma), "latewood_sigma", "must be >= 0")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let kv = c.to_kv();
        assert_eq!(kv.keys().count(), KEYS.len());
        assert!(kv.keys().zip(KEYS).all(|(a, b)| a == *b));
        assert_eq!(PipelineConfig::from_kv(&kv).unwrap(), c);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_kv(&KvFile::new()).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn values_are_applied() {
        let kv = KvFile::parse("epochs = 1\ngabor_stride = 2\naxis_x = 0\naxis_y = 1\nmax_steps = 50\n").unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.fit.fit.epochs, 1);
        assert_eq!(c.detect.gabor.stride, 2);
        assert_eq!(c.detect.maps.axis, [0.0, 1.0]);
        assert_eq!(c.detect.tracer.max_steps, Some(50));
    }

    #[test]
    fn boundary_phase_is_shared() {
        let kv = KvFile::parse("boundary_phase = -1.5").unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.detect.tracer.boundary_phase, -1.5);
        assert_eq!(c.fit.boundary_phase, -1.5);
    }

    #[test]
    fn unknown_key_rejected() {
        let kv = KvFile::parse("epocs = 3").unwrap();
        let err = PipelineConfig::from_kv(&kv).unwrap_err().to_string();
        assert!(err.contains("epocs"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "epochs = 0",
            "learning_rate = -1",
            "f_min = 0.3\nf_max = 0.2",
            "gabor_stride = 0",
            "axis_x = 0\naxis_y = 0",
            "trace_tol = 0",
            "init_rows = 1",
            "eval_threshold = 0",
            "smooth_sigma = NaN",
            "epochs = many",
        ] {
            let kv = KvFile::parse(text).unwrap();
            assert!(PipelineConfig::from_kv(&kv).is_err(), "{text}");
        }
    }
}
