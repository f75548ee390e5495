//! Forward generator of synthetic tangential cuts with known parameters.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dendro::RingLabels;
use crate::error::{Error, Result};
use crate::gabor::PhaseImage;
use crate::image::{GrayImage, RgbImage};
use crate::kv::KvFile;
use crate::model::{ring_coordinate, render_color, render_phase, BoardPose, ColorLookup, ColorMap, DistortionTexture, WoodModelParams};

/// Amplitude bound (in ring widths) for generated distortion.
pub const FOLD_LIMIT: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistortionSpec {
    Zero,
    Constant(f64),
    /// `a sin(2 pi P r / r_max + alpha) sin(2 pi P z / z_max + beta)` with
    /// the phases drawn from the seed.
    Sinusoid { amplitude: f64, periods: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColormapSpec {
    /// Gray intensity equal to `frac`.
    Ramp,
    /// Light earlywood below `threshold`, dark latewood above.
    TwoTone { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub pose: BoardPose,
    pub distortion: DistortionSpec,
    pub colormap: ColormapSpec,
    pub samples_per_ring: usize,
    pub lookup: ColorLookup,
    pub noise_sigma: f64,
    pub texture_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The detection benchmark: 512x512, twelve labelled crossings.
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            pose: BoardPose { u_center: 256.0, x_offset: 2.5, scale: 31.0, s_r: 1.0, z_origin: 0.0, sign_ambiguous: true },
            distortion: DistortionSpec::Sinusoid { amplitude: 0.3, periods: 1.0 },
            colormap: ColormapSpec::Ramp,
            samples_per_ring: 16,
            lookup: ColorLookup::Linear,
            noise_sigma: 0.02,
            texture_size: 512,
            seed: 1,
        }
    }
}

impl SynthSpec {
    /// The fitting benchmark: the detection benchmark at half resolution.
    pub fn fit_benchmark() -> Self {
        let d = Self::default();
        Self {
            width: 256,
            height: 256,
            pose: BoardPose { u_center: 128.0, scale: d.pose.scale / 2.0, ..d.pose },
            ..d
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "width",
    "height",
    "u_center",
    "x_offset",
    "scale",
    "s_r",
    "z_origin",
    "distortion",
    "distortion_amplitude",
    "distortion_periods",
    "colormap",
    "two_tone_threshold",
    "samples_per_ring",
    "lookup",
    "noise_sigma",
    "texture_size",
    "seed",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::TooSmall { width: self.width, height: self.height, min: 3 });
        }
        self.pose.validate()?;
        if self.samples_per_ring == 0 || self.texture_size < 2 || !(self.noise_sigma >= 0.0) {
            return Err(Error::Param("samples_per_ring >= 1, texture_size >= 2 and noise_sigma >= 0 required".into()));
        }
        if let ColormapSpec::TwoTone { threshold } = self.colormap {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::Param(format!("two-tone threshold must lie in (0, 1), got {threshold}")));
            }
        }
        let s_r = self.pose.s_r;
        match self.distortion {
            DistortionSpec::Zero => {}
            DistortionSpec::Constant(c) => {
                if !(c.abs() < FOLD_LIMIT * s_r) {
                    return Err(Error::Param(format!("constant distortion {c} exceeds {FOLD_LIMIT} ring widths")));
                }
            }
            DistortionSpec::Sinusoid { amplitude, periods } => {
                if !(amplitude.abs() < FOLD_LIMIT * s_r) || !(periods >= 0.0) {
                    return Err(Error::Param(format!("sinusoid amplitude {amplitude} must be below {FOLD_LIMIT} ring widths")));
                }
                let r_max = self.texture_extents().0;
                let slope = amplitude.abs() * TAU * periods / r_max;
                if slope >= 1.0 {
                    return Err(Error::Param(format!("distortion folds rings over (radial slope {slope:.3} >= 1)")));
                }
            }
        }
        Ok(())
    }

    fn texture_extents(&self) -> (f64, f64) {
        let t = DistortionTexture::for_footprint(&self.pose, self.width, self.height, 2, 2).expect("valid pose");
        (t.r_max, t.z_max)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(SPEC_KEYS)?;
        let d = Self::default();
        let pose = BoardPose {
            u_center: kv.opt("u_center", d.pose.u_center)?,
            x_offset: kv.opt("x_offset", d.pose.x_offset)?,
            scale: kv.opt("scale", d.pose.scale)?,
            s_r: kv.opt("s_r", d.pose.s_r)?,
            z_origin: kv.opt("z_origin", d.pose.z_origin)?,
            sign_ambiguous: true,
        };
        let distortion = match kv.get("distortion").unwrap_or("sinusoid") {
            "zero" => DistortionSpec::Zero,
            "constant" => DistortionSpec::Constant(kv.req("distortion_amplitude")?),
            "sinusoid" => DistortionSpec::Sinusoid {
                amplitude: kv.opt("distortion_amplitude", 0.3 * pose.s_r)?,
                periods: kv.opt("distortion_periods", 1.0)?,
            },
            other => return Err(Error::format("synth spec", format!("unknown distortion {other:?}"))),
        };
        let colormap = match kv.get("colormap").unwrap_or("ramp") {
            "ramp" => ColormapSpec::Ramp,
            "two_tone" => ColormapSpec::TwoTone { threshold: kv.opt("two_tone_threshold", 0.7)? },
            other => return Err(Error::format("synth spec", format!("unknown colormap {other:?}"))),
        };
        let lookup = match kv.get("lookup").unwrap_or("linear") {
            "linear" => ColorLookup::Linear,
            "nearest" => ColorLookup::Nearest,
            other => return Err(Error::format("synth spec", format!("unknown lookup {other:?}"))),
        };
        let spec = Self {
            width: kv.opt("width", d.width)?,
            height: kv.opt("height", d.height)?,
            pose,
            distortion,
            colormap,
            samples_per_ring: kv.opt("samples_per_ring", d.samples_per_ring)?,
            lookup,
            noise_sigma: kv.opt("noise_sigma", d.noise_sigma)?,
            texture_size: kv.opt("texture_size", d.texture_size)?,
            seed: kv.opt("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.set("u_center", self.pose.u_center);
        kv.set("x_offset", self.pose.x_offset);
        kv.set("scale", self.pose.scale);
        kv.set("s_r", self.pose.s_r);
        kv.set("z_origin", self.pose.z_origin);
        match self.distortion {
            DistortionSpec::Zero => kv.set("distortion", "zero"),
            DistortionSpec::Constant(c) => {
                kv.set("distortion", "constant");
                kv.set("distortion_amplitude", c);
            }
            DistortionSpec::Sinusoid { amplitude, periods } => {
                kv.set("distortion", "sinusoid");
                kv.set("distortion_amplitude", amplitude);
                kv.set("distortion_periods", periods);
            }
        }
        match self.colormap {
            ColormapSpec::Ramp => kv.set("colormap", "ramp"),
            ColormapSpec::TwoTone { threshold } => {
                kv.set("colormap", "two_tone");
                kv.set("two_tone_threshold", threshold);
            }
        }
        kv.set("samples_per_ring", self.samples_per_ring);
        kv.set("lookup", if self.lookup == ColorLookup::Linear { "linear" } else { "nearest" });
        kv.set("noise_sigma", self.noise_sigma);
        kv.set("texture_size", self.texture_size);
        kv.set("seed", self.seed);
        kv
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }
}

pub const EARLYWOOD: [f64; 3] = [0.85, 0.7, 0.5];
pub const LATEWOOD: [f64; 3] = [0.45, 0.3, 0.2];

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub params: WoodModelParams,
    /// Color render with noise.
    pub rgb: RgbImage,
    /// Channel mean of the clean render plus its own noise.
    pub gray: GrayImage,
    /// Noise-free model phase (ring boundaries at 0).
    pub phase: PhaseImage,
    /// Ring crossings of the middle row.
    pub labels: RingLabels,
}

/// Row on which ring labels are placed.
pub fn label_row(height: usize) -> usize {
    height / 2
}

/// `u` positions on row `v` where the ring coordinate crosses an integer,
/// found by bisection between integer columns to 1e-3 px. Touching an
/// integer without crossing it (the axis of a through-axis cut) is not a
/// crossing.
pub fn ring_crossings(pose: &BoardPose, tex: &DistortionTexture, width: usize, v: f64) -> Vec<f64> {
    let uu = |u: f64| ring_coordinate(pose, tex, u, v);
    let samples: Vec<f64> = (0..width).map(|x| uu(x as f64)).collect();
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min).ceil() as i64;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor() as i64;
    let mut out = Vec::new();
    for k in lo..=hi {
        let kf = k as f64;
        let mut last: Option<(usize, f64)> = None;
        let mut zero: Option<usize> = None;
        for (x, &s) in samples.iter().enumerate() {
            let sign = (s - kf).signum();
            if s == kf {
                zero.get_or_insert(x);
                continue;
            }
            if let Some((p, ps)) = last {
                if ps != sign {
                    out.push(match zero {
                        Some(z) => z as f64,
                        None => {
                            let (mut l, mut r) = (p as f64, x as f64);
                            while r - l > 1e-4 {
                                let m = 0.5 * (l + r);
                                if (uu(m) - kf).signum() == ps {
                                    l = m;
                                } else {
                                    r = m;
                                }
                            }
                            0.5 * (l + r)
                        }
                    });
                }
            }
            last = Some((x, sign));
            zero = None;
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.texture_size;
    let base = DistortionTexture::for_footprint(&spec.pose, spec.width, spec.height, n, n)?;
    let tex = match spec.distortion {
        DistortionSpec::Zero => base,
        DistortionSpec::Constant(c) => DistortionTexture::from_values(n, n, base.r_max, base.z_max, vec![c; n * n])?,
        DistortionSpec::Sinusoid { amplitude, periods } => {
            let alpha = rng.random_range(0.0..TAU);
            let beta = rng.random_range(0.0..TAU);
            let (rm, zm) = (base.r_max, base.z_max);
            DistortionTexture::from_fn(n, n, rm, zm, |r, z| {
                amplitude * (TAU * periods * r / rm + alpha).sin() * (TAU * periods * z / zm + beta).sin()
            })?
        }
    };
    if tex.has_fold() {
        return Err(Error::Param("generated distortion folds rings over".into()));
    }
    // Enough rings to cover every pixel, plus one.
    let u_max = [0.0, (spec.width - 1) as f64]
        .iter()
        .flat_map(|&u| [0.0, (spec.height - 1) as f64].map(|v| ring_coordinate(&spec.pose, &tex, u, v)))
        .fold(0.0f64, f64::max);
    let n_rings = (u_max.ceil() as usize + 2).max(2);
    let colormap = match spec.colormap {
        ColormapSpec::Ramp => ColorMap::frac_ramp(n_rings, spec.samples_per_ring)?,
        ColormapSpec::TwoTone { threshold } => {
            let spr = spec.samples_per_ring;
            let profile: Vec<[f64; 3]> =
                (0..spr).map(|j| if ((j as f64 + 0.5) / spr as f64) < threshold { EARLYWOOD } else { LATEWOOD }).collect();
            ColorMap::uniform(n_rings, &profile)?
        }
    };
    let params = WoodModelParams::new(spec.pose, tex, colormap)?;
    let clean = render_color(&params, spec.width, spec.height, spec.lookup);
    let phase = render_phase(&params.pose, &params.distortion, spec.width, spec.height);
    let mut gray = clean.to_gray_mean();
    let mut rgb = clean;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Param(e.to_string()))?;
        for v in rgb.data.iter_mut().chain(gray.data.iter_mut()) {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let v = label_row(spec.height) as f64;
    let labels = RingLabels {
        points: ring_crossings(&params.pose, &params.distortion, spec.width, v).into_iter().map(|u| [u, v]).collect(),
    };
    Ok(SynthOutput { params, rgb, gray, phase, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            width: 128,
            height: 64,
            pose: BoardPose { u_center: 60.0, x_offset: 0.0, scale: 10.0, s_r: 1.0, z_origin: 0.0, sign_ambiguous: true },
            distortion: DistortionSpec::Zero,
            colormap: ColormapSpec::Ramp,
            texture_size: 64,
            noise_sigma: 0.0,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn through_axis_cut_gives_straight_rings() {
        let out = generate(&spec()).unwrap();
        let mut expect = Vec::new();
        // U = 6 at the left edge is not a crossing of the sampled row.
        for k in 1..=6 {
            if k < 6 {
                expect.push(60.0 - 10.0 * k as f64);
            }
            expect.push(60.0 + 10.0 * k as f64);
        }
        expect.sort_by(f64::total_cmp);
        let got: Vec<f64> = out.labels.points.iter().map(|p| p[0]).collect();
        assert_eq!(got.len(), expect.len(), "{got:?}");
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-3, "{got:?}");
        }
        // Same crossings on every row.
        let other = ring_crossings(&out.params.pose, &out.params.distortion, 128, 3.0);
        assert_eq!(other.len(), expect.len());
    }

    #[test]
    fn labels_match_closed_form() {
        let s = SynthSpec { pose: BoardPose { x_offset: 2.3, z_origin: 0.4, ..spec().pose }, ..spec() };
        let out = generate(&s).unwrap();
        let mut expect = Vec::new();
        for k in 3..=7 {
            let d = 10.0 * ((k * k) as f64 - 2.3f64 * 2.3).sqrt();
            expect.extend([60.0 - d, 60.0 + d].into_iter().filter(|u| (0.0..=127.0).contains(u)));
        }
        expect.sort_by(f64::total_cmp);
        let got: Vec<f64> = out.labels.points.iter().map(|p| p[0]).collect();
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-3);
        }
    }

    #[test]
    fn two_tone_area_ratio() {
        let s = SynthSpec { colormap: ColormapSpec::TwoTone { threshold: 0.7 }, lookup: ColorLookup::Nearest, ..spec() };
        let out = generate(&s).unwrap();
        let n = out.rgb.data.len() / 3;
        let dark = out.rgb.data.chunks_exact(3).filter(|c| c[0] < 0.65).count();
        // Through-axis cut: U is linear in |u - uc|, so area tracks frac.
        let frac_dark = dark as f64 / n as f64;
        assert!((frac_dark - 0.3).abs() < 0.02, "{frac_dark}");
        let hist_light = n - dark;
        assert!(out.rgb.data.chunks_exact(3).all(|c| c == EARLYWOOD || c == LATEWOOD));
        assert!(hist_light > dark);
    }

    #[test]
    fn seeded_and_consistent() {
        let s = SynthSpec { distortion: DistortionSpec::Sinusoid { amplitude: 0.3, periods: 1.0 }, noise_sigma: 0.05, ..spec() };
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.gray, b.gray);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.phase, render_phase(&a.params.pose, &a.params.distortion, 128, 64));
        let c = generate(&SynthSpec { seed: 9, ..s }).unwrap();
        assert_ne!(a.rgb, c.rgb);
    }

    #[test]
    fn fold_over_specs_are_rejected() {
        let big = SynthSpec { distortion: DistortionSpec::Sinusoid { amplitude: 0.5, periods: 1.0 }, ..spec() };
        assert!(generate(&big).is_err());
        let steep = SynthSpec { distortion: DistortionSpec::Sinusoid { amplitude: 0.4, periods: 5.0 }, ..spec() };
        assert!(generate(&steep).is_err());
    }

    #[test]
    fn spec_kv_round_trip() {
        for s in [SynthSpec::default(), SynthSpec { colormap: ColormapSpec::TwoTone { threshold: 0.6 }, ..spec() }] {
            let kv = KvFile::parse(&s.to_kv().to_string()).unwrap();
            assert_eq!(SynthSpec::from_kv(&kv).unwrap(), s);
        }
        let bad = KvFile::parse("widht = 5\n").unwrap();
        assert!(SynthSpec::from_kv(&bad).is_err());
    }

    #[test]
    fn benchmark_has_twelve_labels() {
        let out = generate(&SynthSpec { noise_sigma: 0.0, texture_size: 128, ..SynthSpec::default() }).unwrap();
        assert_eq!(out.labels.points.len(), 12);
    }
}
