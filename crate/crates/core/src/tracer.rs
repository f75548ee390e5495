//! Growth-ring tracing through the phase image.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gabor::{magnitude_at, PhaseImage};
use crate::image::GrayImage;
use crate::orientation::OrientationField;
use crate::phase::wrap;
use crate::region::normal_of;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracerConfig {
    /// Walk step, px.
    pub step: f64,
    /// Phase tolerance for seeds, radians; traced points stay within twice this.
    pub tol: f64,
    /// Magnitude floor as a fraction of the mean magnitude over valid pixels.
    pub mag_min_frac: f64,
    /// Consecutive failing steps tolerated before a walk stops.
    pub gap_max: usize,
    /// Step limit per direction; `None` means four times the image perimeter.
    pub max_steps: Option<usize>,
    pub min_separation: f64,
    /// Traces with fewer points are dropped.
    pub min_points: usize,
    /// Phase value marking a ring boundary.
    pub boundary_phase: f64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            step: 1.0,
            tol: 0.2,
            mag_min_frac: 0.05,
            gap_max: 10,
            max_steps: None,
            min_separation: 4.0,
            min_points: 32,
            boundary_phase: std::f64::consts::FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingTrace {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
    /// Response magnitude at the seed the trace started from.
    pub seed_magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RingSet {
    pub rings: Vec<RingTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub pos: [f64; 2],
    pub magnitude: f64,
}

/// Mean magnitude over pixels with valid phase (0 if none).
pub fn mean_magnitude(phase: &PhaseImage, mag: &GrayImage) -> f64 {
    let (s, n) = mag
        .data
        .iter()
        .zip(&phase.valid)
        .filter(|(_, &ok)| ok)
        .fold((0.0, 0usize), |(s, n), (m, _)| (s + m, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Wrapped central-difference phase gradient at a pixel, falling back to
/// one-sided differences next to masked pixels.
fn phase_gradient(phase: &PhaseImage, x: usize, y: usize) -> [f64; 2] {
    let here = phase.phase[y * phase.width + x];
    let diff = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
        (Some(a), Some(b)) => wrap(b - a) / 2.0,
        (Some(a), None) => wrap(here - a),
        (None, Some(b)) => wrap(b - here),
        (None, None) => 0.0,
    };
    let left = (x > 0).then(|| phase.get(x - 1, y)).flatten();
    let right = (x + 1 < phase.width).then(|| phase.get(x + 1, y)).flatten();
    let up = (y > 0).then(|| phase.get(x, y - 1)).flatten();
    let down = (y + 1 < phase.height).then(|| phase.get(x, y + 1)).flatten();
    [diff(left, right), diff(up, down)]
}

/// Pixels within `tol` of `target` phase and at least `mag_min` magnitude,
/// moved onto the `target` level by one linear step along the phase gradient
/// (at most one pixel). Sorted by magnitude, descending, then row-major.
pub fn find_seeds(phase: &PhaseImage, mag: &GrayImage, target: f64, tol: f64, mag_min: f64) -> Vec<Seed> {
    let mut seeds = Vec::new();
    for y in 0..phase.height {
        for x in 0..phase.width {
            let Some(p) = phase.get(x, y) else { continue };
            let m = mag.get(x, y);
            let e = wrap(p - target);
            if e.abs() >= tol || m < mag_min {
                continue;
            }
            let g = phase_gradient(phase, x, y);
            let g2 = g[0] * g[0] + g[1] * g[1];
            let mut pos = [x as f64, y as f64];
            if g2 > 1e-12 {
                let mut d = [-e * g[0] / g2, -e * g[1] / g2];
                let len = d[0].hypot(d[1]);
                if len > 1.0 {
                    d = [d[0] / len, d[1] / len];
                }
                pos = [pos[0] + d[0], pos[1] + d[1]];
            }
            seeds.push(Seed { pos, magnitude: m });
        }
    }
    seeds.sort_by(|a, b| {
        b.magnitude
            .total_cmp(&a.magnitude)
            .then(a.pos[1].total_cmp(&b.pos[1]))
            .then(a.pos[0].total_cmp(&b.pos[0]))
    });
    seeds
}

struct Walker<'a> {
    phase: &'a PhaseImage,
    mag: &'a GrayImage,
    orient: &'a OrientationField,
    cfg: &'a TracerConfig,
    mag_min: f64,
    max_steps: usize,
}

impl Walker<'_> {
    fn inside(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (self.phase.width - 1) as f64 && p[1] <= (self.phase.height - 1) as f64
    }

    fn error_at(&self, p: [f64; 2]) -> Option<f64> {
        self.phase.sample(p[0], p[1]).map(|v| wrap(v - self.cfg.boundary_phase))
    }

    fn on_ring(&self, p: [f64; 2]) -> bool {
        match self.error_at(p) {
            Some(e) => e.abs() < 2.0 * self.cfg.tol && magnitude_at(self.mag, p[0], p[1]) >= self.mag_min,
            None => false,
        }
    }

    /// Moves `p` along `n` until the phase matches the boundary value, with
    /// the total shift capped at one pixel.
    fn correct(&self, p: [f64; 2], n: [f64; 2]) -> [f64; 2] {
        let mut shift = 0.0;
        for _ in 0..4 {
            let at = [p[0] + shift * n[0], p[1] + shift * n[1]];
            let (Some(e), Some(a), Some(b)) = (
                self.error_at(at),
                self.phase.sample(at[0] + 0.5 * n[0], at[1] + 0.5 * n[1]),
                self.phase.sample(at[0] - 0.5 * n[0], at[1] - 0.5 * n[1]),
            ) else {
                break;
            };
            let slope = wrap(a - b);
            if slope.abs() < 1e-6 {
                break;
            }
            let next = (shift - e / slope).clamp(-1.0, 1.0);
            let done = (next - shift).abs() < 1e-4;
            shift = next;
            if done {
                break;
            }
        }
        [p[0] + shift * n[0], p[1] + shift * n[1]]
    }

    /// Points reached from `start` heading along `dir`, and whether the walk
    /// closed on `start`.
    fn walk(&self, start: [f64; 2], dir: [f64; 2]) -> (Vec<[f64; 2]>, bool) {
        let step = self.cfg.step;
        let mut points = Vec::new();
        let mut pos = start;
        let mut prev = dir;
        let mut gaps = 0usize;
        for k in 0..self.max_steps {
            let mut d = self.orient.dir_at(pos[0], pos[1]);
            if d[0] * prev[0] + d[1] * prev[1] < 0.0 {
                d = [-d[0], -d[1]];
            }
            let pred = [pos[0] + step * d[0], pos[1] + step * d[1]];
            let corr = self.correct(pred, normal_of(d));
            let v = [corr[0] - pos[0], corr[1] - pos[1]];
            let len = v[0].hypot(v[1]);
            let u = if len > 1e-9 { [v[0] / len, v[1] / len] } else { d };
            let next = [pos[0] + step * u[0], pos[1] + step * u[1]];
            if !self.inside(next) {
                break;
            }
            if k >= 8 && (next[0] - start[0]).hypot(next[1] - start[1]) < step {
                return (points, true);
            }
            if self.on_ring(next) {
                points.push(next);
                gaps = 0;
            } else {
                gaps += 1;
                if gaps > self.cfg.gap_max {
                    break;
                }
            }
            prev = u;
            pos = next;
        }
        (points, false)
    }
}

fn default_max_steps(width: usize, height: usize) -> usize {
    8 * (width + height)
}

/// Traces one ring through `seed` in both directions along the orientation
/// field, starting forward along `dir` (or the field direction at the seed).
pub fn trace_ring_from(
    phase: &PhaseImage,
    mag: &GrayImage,
    orient: &OrientationField,
    seed: [f64; 2],
    dir: Option<[f64; 2]>,
    mag_min: f64,
    cfg: &TracerConfig,
) -> Result<RingTrace> {
    let walker = Walker {
        phase,
        mag,
        orient,
        cfg,
        mag_min,
        max_steps: cfg.max_steps.unwrap_or_else(|| default_max_steps(phase.width, phase.height)),
    };
    if !walker.inside(seed) || walker.error_at(seed).is_none() {
        return Err(Error::Param(format!("seed ({:.3}, {:.3}) is not on a valid phase pixel", seed[0], seed[1])));
    }
    let d = dir.unwrap_or_else(|| orient.dir_at(seed[0], seed[1]));
    let (fwd, closed) = walker.walk(seed, d);
    let mut points = Vec::with_capacity(fwd.len() * 2 + 1);
    if !closed {
        let (mut back, _) = walker.walk(seed, [-d[0], -d[1]]);
        back.reverse();
        points.extend(back);
    }
    points.push(seed);
    points.extend(fwd);
    Ok(RingTrace { points, closed, seed_magnitude: magnitude_at(mag, seed[0], seed[1]) })
}

/// `trace_ring_from` with the field direction at the seed.
pub fn trace_ring(
    phase: &PhaseImage,
    mag: &GrayImage,
    orient: &OrientationField,
    seed: [f64; 2],
    mag_min: f64,
    cfg: &TracerConfig,
) -> Result<RingTrace> {
    trace_ring_from(phase, mag, orient, seed, None, mag_min, cfg)
}

/// Spatial hash over a point list for nearest-point queries within a radius.
struct PointGrid<'a> {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: &'a [[f64; 2]],
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [[f64; 2]], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells, points }
    }

    fn key(p: &[f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Distance to the nearest point if it is within one cell, else `cell`.
    fn near(&self, p: &[f64; 2]) -> f64 {
        let (cx, cy) = Self::key(p, self.cell);
        let mut best = self.cell;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &i in ids {
                        let q = self.points[i];
                        best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
                    }
                }
            }
        }
        best
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::INFINITY
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Crossings of a polyline with the row `y = v`, as x positions in order of
/// appearance along the polyline.
pub fn row_crossings(points: &[[f64; 2]], closed: bool, v: f64) -> Vec<f64> {
    let n = points.len();
    let segs = if closed && n > 2 { n } else { n.saturating_sub(1) };
    let mut out = Vec::new();
    for k in 0..segs {
        let a = points[k];
        let b = points[(k + 1) % n];
        // Half-open rule so a vertex on the row counts once.
        if (a[1] <= v && b[1] > v) || (b[1] <= v && a[1] > v) {
            let t = (v - a[1]) / (b[1] - a[1]);
            out.push(a[0] + t * (b[0] - a[0]));
        }
    }
    out
}

fn sort_key(trace: &RingTrace, reference_row: f64) -> f64 {
    let xs = row_crossings(&trace.points, trace.closed, reference_row);
    match xs.iter().copied().reduce(f64::min) {
        Some(x) => x,
        None => trace.points.iter().map(|p| p[0]).sum::<f64>() / trace.points.len().max(1) as f64,
    }
}

/// Drops traces lying within `min_separation` (median point distance) of a
/// longer kept trace, then orders the survivors by where they cross
/// `reference_row` (mean x for traces that do not cross it).
pub fn dedup_rings(mut traces: Vec<RingTrace>, min_separation: f64, reference_row: f64) -> RingSet {
    traces.retain(|t| !t.points.is_empty());
    traces.sort_by(|a, b| {
        b.points
            .len()
            .cmp(&a.points.len())
            .then(b.seed_magnitude.total_cmp(&a.seed_magnitude))
            .then_with(|| {
                a.points
                    .iter()
                    .flatten()
                    .zip(b.points.iter().flatten())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    let cell = min_separation.max(1e-6);
    let mut kept: Vec<RingTrace> = Vec::new();
    let mut grids: Vec<PointGrid> = Vec::new();
    // Grids borrow from `traces`, which stays alive and unmodified below.
    let mut keep = vec![false; traces.len()];
    for (i, t) in traces.iter().enumerate() {
        let dup = grids.iter().any(|g| median(t.points.iter().map(|p| g.near(p)).collect()) < min_separation);
        if !dup {
            keep[i] = true;
            grids.push(PointGrid::new(&t.points, cell));
        }
    }
    drop(grids);
    for (t, k) in traces.into_iter().zip(keep) {
        if k {
            kept.push(t);
        }
    }
    let mut keyed: Vec<(f64, RingTrace)> = kept.into_iter().map(|t| (sort_key(&t, reference_row), t)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    RingSet { rings: keyed.into_iter().map(|(_, t)| t).collect() }
}

/// Seeds, traces and deduplicates all rings of a phase image. Seeds falling
/// next to an already traced ring are skipped.
pub fn trace_rings(phase: &PhaseImage, mag: &GrayImage, orient: &OrientationField, cfg: &TracerConfig) -> Result<RingSet> {
    if cfg.step <= 0.0 || cfg.tol <= 0.0 || cfg.min_separation <= 0.0 {
        return Err(Error::Param("tracer step, tol and min_separation must be > 0".into()));
    }
    let (w, h) = (phase.width, phase.height);
    let mag_min = cfg.mag_min_frac * mean_magnitude(phase, mag);
    let seeds = find_seeds(phase, mag, cfg.boundary_phase, cfg.tol, mag_min);
    let mut claimed = vec![false; w * h];
    let claim_r = (cfg.min_separation / 2.0).ceil() as isize;
    let mut traces = Vec::new();
    for seed in seeds {
        let (sx, sy) = (seed.pos[0].round() as isize, seed.pos[1].round() as isize);
        if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize || claimed[sy as usize * w + sx as usize] {
            continue;
        }
        let Ok(trace) = trace_ring(phase, mag, orient, seed.pos, mag_min, cfg) else {
            claimed[sy as usize * w + sx as usize] = true;
            continue;
        };
        claimed[sy as usize * w + sx as usize] = true;
        for p in &trace.points {
            let (px, py) = (p[0].round() as isize, p[1].round() as isize);
            for y in (py - claim_r).max(0)..=(py + claim_r).min(h as isize - 1) {
                for x in (px - claim_r).max(0)..=(px + claim_r).min(w as isize - 1) {
                    claimed[y as usize * w + x as usize] = true;
                }
            }
        }
        if trace.points.len() >= cfg.min_points {
            traces.push(trace);
        }
    }
    Ok(dedup_rings(traces, cfg.min_separation, (h as f64 - 1.0) / 2.0))
}

impl RingSet {
    /// CSV with header `ring_id,point_index,x,y`, coordinates to 4 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ring_id,point_index,x,y\n");
        for (i, r) in self.rings.iter().enumerate() {
            for (j, p) in r.points.iter().enumerate() {
                let _ = writeln!(s, "{i},{j},{:.4},{:.4}", p[0], p[1]);
            }
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rings: Vec<RingTrace> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("ring_id")) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::format("ring CSV", format!("line {}: {line:?}", n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let id: usize = f[0].parse().map_err(|_| bad())?;
            let idx: usize = f[1].parse().map_err(|_| bad())?;
            let x: f64 = f[2].parse().map_err(|_| bad())?;
            let y: f64 = f[3].parse().map_err(|_| bad())?;
            if id > rings.len() || (id == rings.len()) != (idx == 0) {
                return Err(bad());
            }
            if id == rings.len() {
                rings.push(RingTrace { points: Vec::new(), closed: false, seed_magnitude: 0.0 });
            }
            let r = &mut rings[id];
            if idx != r.points.len() {
                return Err(bad());
            }
            r.points.push([x, y]);
        }
        Ok(Self { rings })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}
