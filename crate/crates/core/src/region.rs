//! Curved regions: sampling grids that bend with the local orientation.
//!
//! A region is `2p + 1` contours of `2q + 1` points. The contours' middle
//! points come from a walk perpendicular to the orientation field; each
//! contour is then a walk along the field. Both walks take unit steps with a
//! midpoint (RK2) update and keep the 180°-ambiguous field sign-continuous.

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::orientation::OrientationField;

#[derive(Debug, Clone)]
pub struct CurvedRegion {
    pub center: [f64; 2],
    pub p: usize,
    pub q: usize,
    /// Row-major by contour: index `(i + p) * (2q + 1) + (j + q)` for
    /// contour `i` in `-p..=p` and point `j` in `-q..=q`.
    pub coords: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Unit normal at the center (the +i direction), canonicalized against
    /// the reference axis.
    pub normal: [f64; 2],
}

impl CurvedRegion {
    #[inline]
    pub fn cols(&self) -> usize {
        2 * self.q + 1
    }

    #[inline]
    pub fn rows(&self) -> usize {
        2 * self.p + 1
    }

    #[inline]
    pub fn index(&self, i: isize, j: isize) -> usize {
        (i + self.p as isize) as usize * self.cols() + (j + self.q as isize) as usize
    }

    #[inline]
    pub fn coord(&self, i: isize, j: isize) -> [f64; 2] {
        self.coords[self.index(i, j)]
    }

    #[inline]
    pub fn value(&self, i: isize, j: isize) -> Option<f64> {
        let k = self.index(i, j);
        self.valid[k].then(|| self.values[k])
    }

    /// Number of contours holding at least one in-image sample.
    pub fn valid_contours(&self) -> usize {
        self.valid.chunks(self.cols()).filter(|c| c.iter().any(|&v| v)).count()
    }
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn align(d: [f64; 2], reference: [f64; 2]) -> [f64; 2] {
    if dot(d, reference) < 0.0 {
        [-d[0], -d[1]]
    } else {
        d
    }
}

/// Perpendicular of an along-ring direction.
#[inline]
pub(crate) fn normal_of(d: [f64; 2]) -> [f64; 2] {
    [d[1], -d[0]]
}

/// Normal at `pos` with sign chosen so it has a positive component along
/// `axis`; exact ties fall back to the axis rotated by 90°.
pub fn canonical_normal(orient: &OrientationField, pos: [f64; 2], axis: [f64; 2]) -> [f64; 2] {
    let n = normal_of(orient.dir_at(pos[0], pos[1]));
    let d = dot(n, axis);
    if d > 1e-12 {
        n
    } else if d < -1e-12 {
        [-n[0], -n[1]]
    } else {
        align(n, [-axis[1], axis[0]])
    }
}

/// One midpoint step of length 1 following `field` with sign continuity.
#[inline]
fn rk2_step(pos: [f64; 2], prev: [f64; 2], field: &impl Fn([f64; 2]) -> [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let d1 = align(field(pos), prev);
    let mid = [pos[0] + 0.5 * d1[0], pos[1] + 0.5 * d1[1]];
    let d2 = align(field(mid), d1);
    ([pos[0] + d2[0], pos[1] + d2[1]], d2)
}

/// Walks `steps` unit steps from `start` in direction `first`; returns the
/// visited positions (excluding `start`) and the directions used to reach them.
fn walk(
    start: [f64; 2],
    first: [f64; 2],
    steps: usize,
    field: &impl Fn([f64; 2]) -> [f64; 2],
) -> Vec<([f64; 2], [f64; 2])> {
    let mut out = Vec::with_capacity(steps);
    let mut pos = start;
    let mut prev = first;
    for _ in 0..steps {
        let (next, d) = rk2_step(pos, prev, field);
        out.push((next, d));
        pos = next;
        prev = d;
    }
    out
}

/// Samples the curved region around `center`. The +i (contour) direction is
/// the normal with positive component along `axis`.
pub fn trace_curved_region(
    img: &GrayImage,
    orient: &OrientationField,
    center: [f64; 2],
    p: usize,
    q: usize,
    axis: [f64; 2],
) -> Result<CurvedRegion> {
    if !img.contains(center[0], center[1]) {
        return Err(Error::OutOfBounds { x: center[0], y: center[1], width: img.width, height: img.height });
    }
    if orient.width != img.width || orient.height != img.height {
        return Err(Error::Dimension("orientation field and image differ in size".into()));
    }
    let along = |pos: [f64; 2]| orient.dir_at(pos[0], pos[1]);
    let across = |pos: [f64; 2]| normal_of(orient.dir_at(pos[0], pos[1]));

    let n0 = canonical_normal(orient, center, axis);
    // Middle points of the contours with the local normal at each.
    let mut spine = vec![(center, n0); 2 * p + 1];
    for (k, (pos, d)) in walk(center, n0, p, &across).into_iter().enumerate() {
        spine[p + k + 1] = (pos, d);
    }
    for (k, (pos, d)) in walk(center, [-n0[0], -n0[1]], p, &across).into_iter().enumerate() {
        spine[p - k - 1] = (pos, [-d[0], -d[1]]);
    }

    let cols = 2 * q + 1;
    let mut coords = vec![[0.0; 2]; spine.len() * cols];
    for (row, &(mid, n)) in spine.iter().enumerate() {
        // Along direction at +j: the normal rotated by +90°.
        let t = align(along(mid), [-n[1], n[0]]);
        let base = row * cols;
        coords[base + q] = mid;
        for (k, (pos, _)) in walk(mid, t, q, &along).into_iter().enumerate() {
            coords[base + q + k + 1] = pos;
        }
        for (k, (pos, _)) in walk(mid, [-t[0], -t[1]], q, &along).into_iter().enumerate() {
            coords[base + q - k - 1] = pos;
        }
    }

    let mut values = Vec::with_capacity(coords.len());
    let mut valid = Vec::with_capacity(coords.len());
    for c in &coords {
        match img.sample(c[0], c[1]) {
            Some(v) => {
                values.push(v);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    Ok(CurvedRegion { center, p, q, coords, values, valid, normal: n0 })
}
