//! Procedural wood model: board pose, radial distortion texture and color
//! map, with the forward phase and color renders.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gabor::PhaseImage;
use crate::image::RgbImage;
use crate::kv::KvFile;

/// Pose of a tangential board in the tree's cylindrical frame.
///
/// Pixel `(u, v)` maps to the tree point `x = x_offset`,
/// `y = (u - u_center) / scale`, `z = z_origin + v / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardPose {
    pub u_center: f64,
    pub x_offset: f64,
    /// Pixels per radial unit.
    pub scale: f64,
    /// Radial units per ring.
    pub s_r: f64,
    pub z_origin: f64,
    pub sign_ambiguous: bool,
}

pub const POSE_KEYS: [&str; 6] = ["u_center", "x_offset", "scale", "s_r", "z_origin", "sign_ambiguous"];

impl BoardPose {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.u_center, self.x_offset, self.scale, self.s_r, self.z_origin].iter().all(|v| v.is_finite());
        if !finite || self.scale <= 0.0 || self.s_r <= 0.0 || self.x_offset < 0.0 {
            return Err(Error::Param(format!("invalid board pose {self:?}")));
        }
        Ok(())
    }

    /// Undistorted radius and height of pixel `(u, v)`.
    #[inline]
    pub fn radius_height(&self, u: f64, v: f64) -> (f64, f64) {
        let y = (u - self.u_center) / self.scale;
        ((self.x_offset * self.x_offset + y * y).sqrt(), self.z_origin + v / self.scale)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("u_center", self.u_center);
        kv.set("x_offset", self.x_offset);
        kv.set("scale", self.scale);
        kv.set("s_r", self.s_r);
        kv.set("z_origin", self.z_origin);
        kv.set("sign_ambiguous", self.sign_ambiguous);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(&POSE_KEYS)?;
        let pose = Self {
            u_center: kv.req("u_center")?,
            x_offset: kv.req("x_offset")?,
            scale: kv.req("scale")?,
            s_r: kv.req("s_r")?,
            z_origin: kv.req("z_origin")?,
            sign_ambiguous: kv.req("sign_ambiguous")?,
        };
        pose.validate()?;
        Ok(pose)
    }
}

/// Radial displacement `m_r` on a regular `(r, z)` grid: row `i` sits at
/// `r = i r_max / (rows - 1)`, column `j` at `z = j z_max / (cols - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTexture {
    pub rows: usize,
    pub cols: usize,
    pub r_max: f64,
    pub z_max: f64,
    pub values: Vec<f64>,
}

/// Texel indices and bilinear weights of one lookup.
pub type TexelWeights = [(usize, f64); 4];

impl DistortionTexture {
    pub fn zeros(rows: usize, cols: usize, r_max: f64, z_max: f64) -> Result<Self> {
        Self::from_values(rows, cols, r_max, z_max, vec![0.0; rows * cols])
    }

    pub fn from_values(rows: usize, cols: usize, r_max: f64, z_max: f64, values: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Param(format!("distortion texture needs at least 2x2 texels, got {rows}x{cols}")));
        }
        if !(r_max > 0.0 && z_max > 0.0 && r_max.is_finite() && z_max.is_finite()) {
            return Err(Error::Param(format!("texture extents must be positive, got r_max {r_max}, z_max {z_max}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!("{} texel values for a {rows}x{cols} texture", values.len())));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite texel value".into()));
        }
        Ok(Self { rows, cols, r_max, z_max, values })
    }

    pub fn from_fn(rows: usize, cols: usize, r_max: f64, z_max: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i as f64 * r_max / (rows - 1) as f64, j as f64 * z_max / (cols - 1) as f64));
            }
        }
        Self::from_values(rows, cols, r_max, z_max, values)
    }

    /// Texture covering the footprint of a `width x height` image under
    /// `pose`, with one ring width of margin.
    pub fn for_footprint(pose: &BoardPose, width: usize, height: usize, rows: usize, cols: usize) -> Result<Self> {
        let ymax = ((0.0 - pose.u_center).abs()).max((width as f64 - 1.0 - pose.u_center).abs()) / pose.scale;
        let r_max = (pose.x_offset * pose.x_offset + ymax * ymax).sqrt() + pose.s_r;
        let z_max = pose.z_origin.max(0.0) + (height as f64 - 1.0) / pose.scale + pose.s_r;
        Self::zeros(rows, cols, r_max, z_max)
    }

    #[inline]
    pub fn r_of_row(&self, i: usize) -> f64 {
        i as f64 * self.r_max / (self.rows - 1) as f64
    }

    #[inline]
    pub fn z_of_col(&self, j: usize) -> f64 {
        j as f64 * self.z_max / (self.cols - 1) as f64
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// Bilinear weights of the four texels around `(r, z)`, clamped to the
    /// texture edge.
    #[inline]
    pub fn weights(&self, r: f64, z: f64) -> TexelWeights {
        let fr = (r / self.r_max * (self.rows - 1) as f64).clamp(0.0, (self.rows - 1) as f64);
        let fz = (z / self.z_max * (self.cols - 1) as f64).clamp(0.0, (self.cols - 1) as f64);
        let i0 = (fr.floor() as usize).min(self.rows - 2);
        let j0 = (fz.floor() as usize).min(self.cols - 2);
        let tr = fr - i0 as f64;
        let tz = fz - j0 as f64;
        let k = i0 * self.cols + j0;
        [
            (k, (1.0 - tr) * (1.0 - tz)),
            (k + 1, (1.0 - tr) * tz),
            (k + self.cols, tr * (1.0 - tz)),
            (k + self.cols + 1, tr * tz),
        ]
    }

    #[inline]
    pub fn sample(&self, r: f64, z: f64) -> f64 {
        self.weights(r, z).iter().map(|&(k, w)| w * self.values[k]).sum()
    }

    /// True when the distorted radius `r + m_r` fails to increase between
    /// some pair of radially adjacent texels.
    pub fn has_fold(&self) -> bool {
        (0..self.cols).any(|j| {
            (0..self.rows - 1).any(|i| self.r_of_row(i + 1) + self.get(i + 1, j) - (self.r_of_row(i) + self.get(i, j)) <= 0.0)
        })
    }

    /// Header lines `rows`, `cols`, `r_max`, `z_max`, then one line of
    /// space-separated values per row.
    pub fn to_text(&self) -> String {
        let mut s = format!("rows {}\ncols {}\nr_max {}\nz_max {}\n", self.rows, self.cols, self.r_max, self.z_max);
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::format("texture", format!("missing `{key}` header")))?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
                _ => Err(Error::format("texture", format!("expected `{key} <value>`, got {line:?}"))),
            }
        };
        let bad = |what: &str, v: &str| Error::format("texture", format!("bad {what} {v:?}"));
        let rows_s = header("rows")?;
        let cols_s = header("cols")?;
        let rmax_s = header("r_max")?;
        let zmax_s = header("z_max")?;
        let rows: usize = rows_s.parse().map_err(|_| bad("rows", &rows_s))?;
        let cols: usize = cols_s.parse().map_err(|_| bad("cols", &cols_s))?;
        let r_max: f64 = rmax_s.parse().map_err(|_| bad("r_max", &rmax_s))?;
        let z_max: f64 = zmax_s.parse().map_err(|_| bad("z_max", &zmax_s))?;
        let mut values = Vec::with_capacity(rows * cols);
        for (n, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("value", t)))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::format("texture", format!("row {n} has {} values, expected {cols}", row.len())));
            }
            values.extend(row);
        }
        Self::from_values(rows, cols, r_max, z_max, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// How colors are read between the samples of a ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorLookup {
    /// Samples sit at bin centers; values in between are linearly
    /// interpolated (and extrapolated past the first and last center).
    Linear,
    /// Each sample covers its whole bin.
    Nearest,
}

/// Per-ring color profiles: `samples_per_ring` RGB samples for each ring.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    pub n_rings: usize,
    pub samples_per_ring: usize,
    pub rgb: Vec<[f64; 3]>,
}

impl ColorMap {
    pub fn new(n_rings: usize, samples_per_ring: usize, rgb: Vec<[f64; 3]>) -> Result<Self> {
        if n_rings == 0 || samples_per_ring == 0 {
            return Err(Error::Param("color map needs at least one ring and one sample per ring".into()));
        }
        if rgb.len() != n_rings * samples_per_ring {
            return Err(Error::Dimension(format!("{} colors for {n_rings}x{samples_per_ring} map", rgb.len())));
        }
        if rgb.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Param("color map channels must lie in [0, 1]".into()));
        }
        Ok(Self { n_rings, samples_per_ring, rgb })
    }

    /// The same profile for every ring.
    pub fn uniform(n_rings: usize, profile: &[[f64; 3]]) -> Result<Self> {
        Self::new(n_rings, profile.len(), profile.iter().copied().cycle().take(n_rings * profile.len()).collect())
    }

    /// Gray ramp whose intensity equals `frac`.
    pub fn frac_ramp(n_rings: usize, samples_per_ring: usize) -> Result<Self> {
        let profile: Vec<[f64; 3]> =
            (0..samples_per_ring).map(|j| [(j as f64 + 0.5) / samples_per_ring as f64; 3]).collect();
        Self::uniform(n_rings, &profile)
    }

    #[inline]
    pub fn get(&self, ring: usize, j: usize) -> [f64; 3] {
        self.rgb[ring * self.samples_per_ring + j]
    }

    /// Color at `(ring, frac)`; the ring index is clamped to the map.
    pub fn lookup(&self, ring: i64, frac: f64, mode: ColorLookup) -> [f64; 3] {
        let k = ring.clamp(0, self.n_rings as i64 - 1) as usize;
        let n = self.samples_per_ring;
        match mode {
            ColorLookup::Nearest => self.get(k, ((frac * n as f64).floor().max(0.0) as usize).min(n - 1)),
            ColorLookup::Linear => {
                if n == 1 {
                    return self.get(k, 0);
                }
                let s = frac * n as f64 - 0.5;
                let j0 = (s.floor().max(0.0) as usize).min(n - 2);
                let t = s - j0 as f64;
                let (a, b) = (self.get(k, j0), self.get(k, j0 + 1));
                [0, 1, 2].map(|c| (a[c] + t * (b[c] - a[c])).clamp(0.0, 1.0))
            }
        }
    }

    /// CSV `ring,frac_index,r,g,b`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ring,frac_index,r,g,b\n");
        for k in 0..self.n_rings {
            for j in 0..self.samples_per_ring {
                let c = self.get(k, j);
                let _ = writeln!(s, "{k},{j},{},{},{}", c[0], c[1], c[2]);
            }
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, usize, [f64; 3])> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("ring")) {
                continue;
            }
            let bad = || Error::format("color map CSV", format!("line {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let k: usize = f[0].parse().map_err(|_| bad())?;
            let j: usize = f[1].parse().map_err(|_| bad())?;
            let mut c = [0.0; 3];
            for (ch, t) in c.iter_mut().zip(&f[2..]) {
                *ch = t.parse().map_err(|_| bad())?;
            }
            entries.push((k, j, c));
        }
        let n_rings = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let spr = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if n_rings == 0 || entries.len() != n_rings * spr {
            return Err(Error::format("color map CSV", "entries do not form a complete ring x sample table"));
        }
        let mut rgb = vec![[f64::NAN; 3]; n_rings * spr];
        for (k, j, c) in entries {
            if !rgb[k * spr + j][0].is_nan() {
                return Err(Error::format("color map CSV", format!("duplicate entry ({k}, {j})")));
            }
            rgb[k * spr + j] = c;
        }
        Self::new(n_rings, spr, rgb)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Everything the forward render needs. The tangential distortion magnitude
/// is carried for completeness and must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WoodModelParams {
    pub pose: BoardPose,
    pub distortion: DistortionTexture,
    pub colormap: ColorMap,
    pub m_t: f64,
}

impl WoodModelParams {
    pub fn new(pose: BoardPose, distortion: DistortionTexture, colormap: ColorMap) -> Result<Self> {
        pose.validate()?;
        Ok(Self { pose, distortion, colormap, m_t: 0.0 })
    }
}

/// `m_r` at undistorted radius `r` and height `z`.
#[inline]
pub fn sample_distortion(distortion: &DistortionTexture, r: f64, z: f64) -> f64 {
    distortion.sample(r, z)
}

/// Distorted radius `r + m_r(r, z)`.
#[inline]
pub fn distorted_radius(distortion: &DistortionTexture, r: f64, z: f64) -> f64 {
    r + distortion.sample(r, z)
}

/// Continuous ring coordinate of pixel `(u, v)`.
#[inline]
pub fn ring_coordinate(pose: &BoardPose, distortion: &DistortionTexture, u: f64, v: f64) -> f64 {
    let (r, z) = pose.radius_height(u, v);
    distorted_radius(distortion, r, z) / pose.s_r
}

/// Ring index and within-ring fraction of `U`.
#[inline]
pub fn growth_profile(u: f64) -> (i64, f64) {
    let k = u.floor();
    (k as i64, u - k)
}

/// `2 pi frac` represented in `(-pi, pi]`.
#[inline]
pub fn frac_to_phase(frac: f64) -> f64 {
    if frac > 0.5 {
        TAU * (frac - 1.0)
    } else {
        TAU * frac
    }
}

/// Phase of the model at every pixel of a `width x height` image.
pub fn render_phase(pose: &BoardPose, distortion: &DistortionTexture, width: usize, height: usize) -> PhaseImage {
    let phase: Vec<f64> = (0..width * height)
        .into_par_iter()
        .map(|k| {
            let u = ring_coordinate(pose, distortion, (k % width) as f64, (k / width) as f64);
            frac_to_phase(growth_profile(u).1)
        })
        .collect();
    debug_assert!(phase.iter().all(|p| *p > -PI && *p <= PI));
    PhaseImage { width, height, phase, valid: vec![true; width * height] }
}

/// Color render of the model.
pub fn render_color(params: &WoodModelParams, width: usize, height: usize, mode: ColorLookup) -> RgbImage {
    let data: Vec<f64> = (0..width * height)
        .into_par_iter()
        .flat_map_iter(|k| {
            let u = ring_coordinate(&params.pose, &params.distortion, (k % width) as f64, (k / width) as f64);
            let (ring, frac) = growth_profile(u);
            params.colormap.lookup(ring, frac, mode)
        })
        .collect();
    RgbImage { width, height, data }
}
