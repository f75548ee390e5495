//! Dendrochronology helpers: label files, detection scoring and the
//! latewood lightness series.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{gaussian_kernel, GrayImage, RgbImage};
use crate::kv::KvFile;
use crate::model::ColorMap;
use crate::tracer::{RingSet, RingTrace};

/// HSV value channel, `max(r, g, b)`.
pub fn hsv_value_channel(img: &RgbImage) -> GrayImage {
    let data = img.data.chunks_exact(3).map(|c| c[0].max(c[1]).max(c[2])).collect();
    GrayImage { width: img.width, height: img.height, data }
}

/// One `(x, y)` pixel position per ground-truth ring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RingLabels {
    pub points: Vec<[f64; 2]>,
}

impl RingLabels {
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for p in &self.points {
            if !(p[0] >= 0.0 && p[0] <= (width - 1) as f64 && p[1] >= 0.0 && p[1] <= (height - 1) as f64) {
                return Err(Error::OutOfBounds { x: p[0], y: p[1], width, height });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{}", p[0], p[1]);
        }
        s
    }

    /// `x,y` per line; a non-numeric first line is a header.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some((x, y)) if x.is_finite() && y.is_finite() => points.push([x, y]),
                None if points.is_empty() && n == 0 => continue,
                _ => return Err(Error::format("label CSV", format!("line {}: {line:?}", n + 1))),
            }
        }
        Ok(Self { points })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub matches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub threshold: f64,
}

impl ScoreReport {
    /// `None` when there are no labels.
    pub fn sensitivity(&self) -> Option<f64> {
        let n = self.matches + self.misses;
        (n > 0).then(|| self.matches as f64 / n as f64)
    }

    /// `None` when there are no detected rings.
    pub fn precision(&self) -> Option<f64> {
        let n = self.matches + self.false_positives;
        (n > 0).then(|| self.matches as f64 / n as f64)
    }

    /// Flat key-value form; undefined ratios are written as `undefined`.
    pub fn to_kv(&self) -> KvFile {
        let ratio = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        let mut kv = KvFile::new();
        kv.set("sensitivity", ratio(self.sensitivity()));
        kv.set("precision", ratio(self.precision()));
        kv.set("matches", self.matches);
        kv.set("misses", self.misses);
        kv.set("false_positives", self.false_positives);
        kv.set("threshold", self.threshold);
        kv
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Distance from `p` to the polyline of a trace (closed traces include the
/// closing segment).
pub fn distance_to_ring(p: [f64; 2], ring: &RingTrace) -> f64 {
    let pts = &ring.points;
    match pts.len() {
        0 => f64::INFINITY,
        1 => (p[0] - pts[0][0]).hypot(p[1] - pts[0][1]),
        n => {
            let mut d = pts.windows(2).map(|s| point_segment_distance(p, s[0], s[1])).fold(f64::INFINITY, f64::min);
            if ring.closed {
                d = d.min(point_segment_distance(p, pts[n - 1], pts[0]));
            }
            d
        }
    }
}

/// Greedy one-to-one matching of labels to rings by ascending distance;
/// a pair matches when its distance is below `threshold`.
pub fn score_detection(rings: &RingSet, labels: &RingLabels, threshold: f64) -> ScoreReport {
    let mut pairs = Vec::new();
    for (li, &p) in labels.points.iter().enumerate() {
        for (ri, ring) in rings.rings.iter().enumerate() {
            let d = distance_to_ring(p, ring);
            if d < threshold {
                pairs.push((d, li, ri));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut label_used = vec![false; labels.points.len()];
    let mut ring_used = vec![false; rings.rings.len()];
    let mut matches = 0;
    for (_, li, ri) in pairs {
        if !label_used[li] && !ring_used[ri] {
            label_used[li] = true;
            ring_used[ri] = true;
            matches += 1;
        }
    }
    ScoreReport {
        matches,
        misses: labels.points.len() - matches,
        false_positives: rings.rings.len() - matches,
        threshold,
    }
}

/// Per-ring latewood intensity: inverted HSL lightness averaged over the
/// ring's bins, min-max normalized (all 0.5 when constant), then smoothed
/// along the ring axis with a Gaussian of `sigma` rings (clamped ends).
pub fn latewood_series(colormap: &ColorMap, sigma: f64) -> Result<Vec<f64>> {
    if colormap.n_rings < 2 {
        return Err(Error::Insufficient("latewood series needs at least two rings".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Param(format!("sigma must be >= 0, got {sigma}")));
    }
    let n = colormap.n_rings;
    let spr = colormap.samples_per_ring;
    let inv: Vec<f64> = (0..n)
        .map(|k| {
            let l: f64 = (0..spr)
                .map(|j| {
                    let c = colormap.get(k, j);
                    (c[0].max(c[1]).max(c[2]) + c[0].min(c[1]).min(c[2])) / 2.0
                })
                .sum::<f64>()
                / spr as f64;
            1.0 - l
        })
        .collect();
    let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 {
        return Ok(vec![0.5; n]);
    }
    let norm: Vec<f64> = inv.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let kernel = gaussian_kernel(sigma);
    let rad = (kernel.len() / 2) as isize;
    Ok((0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * norm[(i + t as isize - rad).clamp(0, n as isize - 1) as usize])
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vline(x: f64, h: usize) -> RingTrace {
        RingTrace { points: (0..h).map(|y| [x, y as f64]).collect(), closed: false, seed_magnitude: 1.0 }
    }

    #[test]
    fn value_channel() {
        let mut img = RgbImage::new(3, 1);
        img.set(0, 0, [1.0, 0.0, 0.0]);
        img.set(1, 0, [0.3, 0.3, 0.3]);
        img.set(2, 0, [0.2, 0.8, 0.5]);
        assert_eq!(hsv_value_channel(&img).data, vec![1.0, 0.3, 0.8]);
    }

    #[test]
    fn scoring_examples() {
        let labels = RingLabels { points: (0..10).map(|i| [10.0 * i as f64 + 5.0, 20.0]).collect() };
        let exact = RingSet { rings: (0..10).map(|i| vline(10.0 * i as f64 + 5.0, 40)).collect() };
        let r = score_detection(&exact, &labels, 3.0);
        assert_eq!((r.sensitivity(), r.precision()), (Some(1.0), Some(1.0)));

        let r = score_detection(&RingSet::default(), &labels, 3.0);
        assert_eq!((r.sensitivity(), r.precision()), (Some(0.0), None));
        assert_eq!(r.to_kv().get("precision"), Some("undefined"));

        let mut extra = exact.clone();
        extra.rings.push(vline(200.0, 40));
        extra.rings.push(vline(300.0, 40));
        let r = score_detection(&extra, &labels, 3.0);
        assert_eq!(r.sensitivity(), Some(1.0));
        assert!((r.precision().unwrap() - 10.0 / 12.0).abs() < 1e-15);

        let shifted = RingSet { rings: (0..10).map(|i| vline(10.0 * i as f64 + 10.0, 40)).collect() };
        assert_eq!(score_detection(&shifted, &labels, 3.0).sensitivity(), Some(0.0));
        assert_eq!(score_detection(&shifted, &labels, 10.0).sensitivity(), Some(1.0));
    }

    #[test]
    fn one_ring_matches_one_label() {
        let labels = RingLabels { points: vec![[10.0, 5.0], [11.0, 5.0]] };
        let rings = RingSet { rings: vec![vline(10.5, 10)] };
        let r = score_detection(&rings, &labels, 3.0);
        assert_eq!((r.matches, r.misses, r.false_positives), (1, 1, 0));
    }

    #[test]
    fn closed_ring_distance_uses_closing_segment() {
        let ring = RingTrace { points: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]], closed: true, seed_magnitude: 1.0 };
        assert!((distance_to_ring([-1.0, 5.0], &ring) - 1.0).abs() < 1e-12);
        let open = RingTrace { closed: false, ..ring };
        assert!((distance_to_ring([-1.0, 5.0], &open) - 26f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn labels_csv() {
        let l = RingLabels::parse_csv("x,y\n1.5, 2\n3,4\n").unwrap();
        assert_eq!(l.points, vec![[1.5, 2.0], [3.0, 4.0]]);
        assert_eq!(RingLabels::parse_csv(&l.to_csv()).unwrap(), l);
        assert_eq!(RingLabels::parse_csv("1,2\n").unwrap().points, vec![[1.0, 2.0]]);
        assert!(RingLabels::parse_csv("1,2\nfoo,3\n").is_err());
        assert!(l.check_bounds(4, 5).is_ok());
        assert!(l.check_bounds(3, 5).is_err());
    }

    fn gray_rings(levels: &[f64]) -> ColorMap {
        ColorMap::new(levels.len(), 2, levels.iter().flat_map(|&l| [[l; 3], [l; 3]]).collect()).unwrap()
    }

    #[test]
    fn latewood_examples() {
        assert_eq!(latewood_series(&gray_rings(&[0.2, 0.8]), 0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(latewood_series(&gray_rings(&[0.4; 5]), 1.0).unwrap(), vec![0.5; 5]);
        let ramp: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let s = latewood_series(&gray_rings(&ramp), 1.0).unwrap();
        assert!(s.windows(2).all(|w| w[1] < w[0]), "{s:?}");
        assert!(latewood_series(&gray_rings(&[0.5]), 1.0).is_err());
    }

    #[test]
    fn lightness_uses_max_and_min() {
        let cm = ColorMap::new(2, 1, vec![[1.0, 0.0, 0.0], [0.25, 0.25, 0.25]]).unwrap();
        // Red has lightness 0.5, gray 0.25.
        assert_eq!(latewood_series(&cm, 0.0).unwrap(), vec![0.0, 1.0]);
    }
}
