//! Board pose estimation from traced rings.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::BoardPose;
use crate::tracer::{row_crossings, RingSet};

/// Crossings of all rings with the row `y = v`, sorted; crossings closer
/// than 1e-9 px collapse into one.
pub fn ring_scanline_positions(rings: &RingSet, v: f64) -> Result<Vec<f64>> {
    let mut xs: Vec<f64> = rings.rings.iter().flat_map(|r| row_crossings(&r.points, r.closed, v)).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if xs.len() < 3 {
        return Err(Error::Insufficient(format!("{} ring crossings on row {v:.1}, need at least 3", xs.len())));
    }
    Ok(xs)
}

/// Which side of the ring crossings the tree axis likely lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterSide {
    Inside,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterEstimate {
    pub u_center: f64,
    /// Fraction of adjacent gap pairs that shrink away from the widest gap.
    pub score: f64,
    pub side: CenterSide,
    /// Index of the widest gap (between positions `gap` and `gap + 1`).
    pub gap: usize,
}

impl CenterEstimate {
    pub fn outside(&self) -> bool {
        self.side != CenterSide::Inside
    }
}

fn gaps(positions: &[f64]) -> Vec<f64> {
    positions.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Midpoint of the widest gap. Gaps shrink away from the tree axis, so a
/// widest gap at either end of the list, or a monotonicity score below 0.7,
/// means the axis probably projects outside the image on that side.
pub fn find_center_projection(positions: &[f64]) -> Result<CenterEstimate> {
    if positions.len() < 4 {
        return Err(Error::Insufficient(format!("{} ring positions, need at least 4", positions.len())));
    }
    let g = gaps(positions);
    let k = g.iter().enumerate().fold(0, |best, (i, v)| if *v > g[best] { i } else { best });
    let mut good = 0usize;
    let mut total = 0usize;
    for i in 0..g.len() - 1 {
        total += 1;
        let ok = if i < k { g[i] <= g[i + 1] } else { g[i] >= g[i + 1] };
        good += ok as usize;
    }
    let score = if total == 0 { 1.0 } else { good as f64 / total as f64 };
    let side = if k == 0 {
        CenterSide::Left
    } else if k == g.len() - 1 {
        CenterSide::Right
    } else if score < 0.7 {
        if g[0] > g[g.len() - 1] {
            CenterSide::Left
        } else {
            CenterSide::Right
        }
    } else {
        CenterSide::Inside
    };
    Ok(CenterEstimate { u_center: 0.5 * (positions[k] + positions[k + 1]), score, side, gap: k })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median ring spacing in pixels (`scale * s_r`). When the widest gap is
/// interior it and its two neighbours are left out, since they straddle the
/// tree axis.
pub fn estimate_scale(positions: &[f64]) -> Result<f64> {
    if positions.len() < 3 {
        return Err(Error::Insufficient(format!("{} ring positions, need at least 3", positions.len())));
    }
    let g = gaps(positions);
    let k = g.iter().enumerate().fold(0, |best, (i, v)| if *v > g[best] { i } else { best });
    let interior = k > 0 && k + 1 < g.len();
    let kept: Vec<f64> = if interior {
        g.iter().enumerate().filter(|(i, _)| i.abs_diff(k) > 1).map(|(_, v)| *v).collect()
    } else {
        g.clone()
    };
    let kept = if kept.is_empty() { g.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).collect() } else { kept };
    Ok(median(kept))
}

/// Mean squared distance of the points' ring coordinates to the nearest
/// integer, for an undistorted model with unit ring width.
pub fn pose_loss(points: &[[f64; 2]], u_center: f64, x_offset: f64, scale: f64) -> f64 {
    let x2 = x_offset * x_offset;
    let s = points
        .iter()
        .map(|p| {
            let y = (p[0] - u_center) / scale;
            let u = (x2 + y * y).sqrt();
            let d = u - u.round();
            d * d
        })
        .sum::<f64>();
    s / points.len() as f64
}

/// Search grid around an initial pose. `x_offset` and ring width are in
/// radial units (the ring width is fixed to 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGrid {
    pub x_half_range: f64,
    pub x_step: f64,
    pub scale_rel_range: f64,
    pub scale_rel_step: f64,
    /// Number of successively finer grids (each 10x finer, spanning two
    /// steps of the previous level) after the first.
    pub refine_levels: usize,
    /// Upper bound on the number of ring points entering the loss.
    pub max_points: usize,
}

impl Default for PoseGrid {
    fn default() -> Self {
        Self { x_half_range: 3.0, x_step: 0.05, scale_rel_range: 0.2, scale_rel_step: 0.01, refine_levels: 2, max_points: 4000 }
    }
}

/// Every `k`-th point of every ring so at most `max` points remain.
fn subsample(rings: &RingSet, max: usize) -> Vec<[f64; 2]> {
    let total: usize = rings.rings.iter().map(|r| r.points.len()).sum();
    let step = total.div_ceil(max.max(1)).max(1);
    rings.rings.iter().flat_map(|r| r.points.iter().step_by(step).copied()).collect()
}

#[derive(Clone, Copy)]
struct Candidate {
    loss: f64,
    u_center: f64,
    x: f64,
    scale: f64,
}

/// Lowest loss; ties go to the lexicographically smallest
/// `(x_offset, scale, u_center)`.
fn better(a: Candidate, b: Candidate) -> Candidate {
    let key = |c: &Candidate| (c.loss, c.x, c.scale, c.u_center);
    let (ka, kb) = (key(&a), key(&b));
    let ord = ka
        .0
        .total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .then(ka.3.total_cmp(&kb.3));
    if ord.is_le() {
        a
    } else {
        b
    }
}

fn axis(center: f64, half: f64, step: f64, min: f64) -> Vec<f64> {
    let n = (half / step).round() as i64;
    (-n..=n).map(|k| center + k as f64 * step).filter(|v| *v >= min).collect()
}

fn grid_search(points: &[[f64; 2]], us: &[f64], xs: &[f64], scales: &[f64]) -> Candidate {
    let cells: Vec<(f64, f64, f64)> =
        us.iter().flat_map(|&u| xs.iter().flat_map(move |&x| scales.iter().map(move |&s| (u, x, s)))).collect();
    cells
        .par_iter()
        .map(|&(u, x, s)| Candidate { loss: pose_loss(points, u, x, s), u_center: u, x, scale: s })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(better)
        .expect("non-empty grid")
}

/// Grid search over `x_offset` and `scale` around `init`, followed by
/// `refine_levels` finer grids. With `search_center` the projected axis
/// position is searched as well, that many px either side.
pub fn brute_force_pose(rings: &RingSet, init: &BoardPose, grid: &PoseGrid, search_center: Option<f64>) -> Result<BoardPose> {
    let points = subsample(rings, grid.max_points);
    if points.is_empty() {
        return Err(Error::Insufficient("no ring points for pose search".into()));
    }
    let mut u_step = search_center.map(|h| (h / 20.0).max(0.05));
    let us = match (search_center, u_step) {
        (Some(h), Some(st)) => axis(init.u_center, h, st, f64::NEG_INFINITY),
        _ => vec![init.u_center],
    };
    let xs = axis(init.x_offset, grid.x_half_range, grid.x_step, 0.0);
    let s_step = grid.scale_rel_step * init.scale;
    let scales = axis(init.scale, grid.scale_rel_range * init.scale, s_step, 1e-9);
    let mut best = grid_search(&points, &us, &xs, &scales);
    let (mut xst, mut sst) = (grid.x_step, s_step);
    for _ in 0..grid.refine_levels {
        let us = match u_step {
            Some(st) => {
                let fine = st / 10.0;
                u_step = Some(fine);
                axis(best.u_center, 2.0 * st, fine, f64::NEG_INFINITY)
            }
            None => vec![best.u_center],
        };
        let xs = axis(best.x, 2.0 * xst, xst / 10.0, 0.0);
        let scales = axis(best.scale, 2.0 * sst, sst / 10.0, 1e-9);
        xst /= 10.0;
        sst /= 10.0;
        best = better(best, grid_search(&points, &us, &xs, &scales));
    }
    Ok(BoardPose {
        u_center: best.u_center,
        x_offset: best.x,
        scale: best.scale,
        s_r: 1.0,
        z_origin: 0.0,
        sign_ambiguous: best.x > 0.0,
    })
}

/// Least-squares `(x_offset, scale)` for a fixed axis position and ring
/// indices: crossings at distance `d` from the axis with index `k` satisfy
/// `d^2 = scale^2 k^2 - scale^2 x^2`, linear in `(scale^2, -scale^2 x^2)`.
/// Returns the mean squared ring-coordinate residual with the estimate.
fn lsq_pose(samples: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = samples.len() as f64;
    let (mut sk, mut sd, mut skk, mut skd) = (0.0, 0.0, 0.0, 0.0);
    for &(d2, k2) in samples {
        sk += k2;
        sd += d2;
        skk += k2 * k2;
        skd += k2 * d2;
    }
    let den = n * skk - sk * sk;
    if !(den.abs() > 1e-12) {
        return None;
    }
    let a = (n * skd - sk * sd) / den;
    let b = (sd - a * sk) / n;
    if !(a > 0.0) {
        return None;
    }
    let x2 = (-b / a).max(0.0);
    let resid = samples.iter().map(|&(d2, k2)| ((x2 + d2 / a).sqrt() - k2.sqrt()).powi(2)).sum::<f64>() / n;
    Some((resid, x2.sqrt(), a.sqrt()))
}

/// Initial poses for an axis between the crossings: every axis position
/// on a quarter-pixel grid across `span`, every index of the ring nearest the
/// axis on the right, and that index +-1 on the left. Returns the best
/// candidate per right-hand index, best first.
fn inside_candidates(positions: &[f64], span: (f64, f64), max_inner: usize) -> Vec<(f64, f64, f64, f64)> {
    let steps = ((span.1 - span.0) / 0.25).ceil().max(1.0) as usize;
    let mut best: Vec<Option<(f64, f64, f64, f64)>> = vec![None; max_inner + 1];
    for st in 0..=steps {
        let u = span.0 + (span.1 - span.0) * st as f64 / steps as f64;
        let left: Vec<f64> = positions.iter().rev().filter(|p| **p < u).map(|p| u - p).collect();
        let right: Vec<f64> = positions.iter().filter(|p| **p > u).map(|p| p - u).collect();
        for k0r in 1..=max_inner {
            for k0l in k0r.saturating_sub(1).max(1)..=k0r + 1 {
                let samples: Vec<(f64, f64)> = left
                    .iter()
                    .enumerate()
                    .map(|(j, d)| (d * d, ((k0l + j) as f64).powi(2)))
                    .chain(right.iter().enumerate().map(|(j, d)| (d * d, ((k0r + j) as f64).powi(2))))
                    .collect();
                if let Some((r, x, sc)) = lsq_pose(&samples) {
                    if best[k0r].is_none_or(|b| r < b.0) {
                        best[k0r] = Some((r, u, x, sc));
                    }
                }
            }
        }
    }
    let mut out: Vec<(f64, f64, f64, f64)> = best.into_iter().flatten().collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Closed-form `(u_center, x_offset, scale)` from three consecutive
/// crossings on one side of the axis, the one nearest the axis first,
/// assuming the nearest is ring `k0`. Distances satisfy
/// `d_j^2 = scale^2 ((k0 + j)^2 - x^2)`.
fn three_ring_pose(p: [f64; 3], k0: f64) -> Option<(f64, f64, f64)> {
    let (a, b) = (2.0 * k0 + 1.0, 2.0 * k0 + 3.0);
    // (p0 - p1)(2u - p0 - p1) b = (p1 - p2)(2u - p1 - p2) a, linear in u.
    let c1 = (p[0] - p[1]) * b;
    let c2 = (p[1] - p[2]) * a;
    let den = 2.0 * (c1 - c2);
    if den.abs() < 1e-12 {
        return None;
    }
    let u = (c1 * (p[0] + p[1]) - c2 * (p[1] + p[2])) / den;
    let d0 = (u - p[0]).abs();
    let d1 = (u - p[1]).abs();
    let s2 = (d1 * d1 - d0 * d0) / a;
    if !(s2 > 0.0) {
        return None;
    }
    let scale = s2.sqrt();
    let x2 = k0 * k0 - d0 * d0 / s2;
    if x2 < -1e-9 {
        return None;
    }
    Some((u, x2.max(0.0).sqrt(), scale))
}

/// Alternates the `(x_offset, scale)` grid search with a line search of
/// the axis position over `+-u_half` px, at every grid level.
fn refine_inside(rings: &RingSet, init: &BoardPose, grid: &PoseGrid, u_half: f64) -> Result<BoardPose> {
    let points = subsample(rings, grid.max_points);
    if points.is_empty() {
        return Err(Error::Insufficient("no ring points for pose search".into()));
    }
    let xs = axis(init.x_offset, grid.x_half_range, grid.x_step, 0.0);
    let s_step = grid.scale_rel_step * init.scale;
    let scales = axis(init.scale, grid.scale_rel_range * init.scale, s_step, 1e-9);
    let mut best = grid_search(&points, &[init.u_center], &xs, &scales);
    let mut u_step = (u_half / 20.0).max(1e-3);
    best = better(best, grid_search(&points, &axis(best.u_center, u_half, u_step, f64::NEG_INFINITY), &[best.x], &[best.scale]));
    best = better(best, grid_search(&points, &[best.u_center], &xs, &scales));
    let (mut xst, mut sst) = (grid.x_step, s_step);
    for _ in 0..grid.refine_levels {
        let xs = axis(best.x, 2.0 * xst, xst / 10.0, 0.0);
        let scales = axis(best.scale, 2.0 * sst, sst / 10.0, 1e-9);
        best = better(best, grid_search(&points, &[best.u_center], &xs, &scales));
        best = better(best, grid_search(&points, &axis(best.u_center, 2.0 * u_step, u_step / 10.0, f64::NEG_INFINITY), &[best.x], &[best.scale]));
        xst /= 10.0;
        sst /= 10.0;
        u_step /= 10.0;
    }
    Ok(BoardPose {
        u_center: best.u_center,
        x_offset: best.x,
        scale: best.scale,
        s_r: 1.0,
        z_origin: 0.0,
        sign_ambiguous: best.x > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocateConfig {
    pub grid: PoseGrid,
    /// Rows (as fractions of the height) whose crossings vote on the axis
    /// position.
    pub scan_rows: usize,
    /// Largest ring index tried for the ring nearest the axis.
    pub max_inner_ring: usize,
    /// Initial poses refined by the grid search when the axis is inside.
    pub candidates: usize,
}

impl Default for LocateConfig {
    fn default() -> Self {
        Self { grid: PoseGrid::default(), scan_rows: 7, max_inner_ring: 40, candidates: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocateReport {
    pub center: CenterEstimate,
    pub loss: f64,
    pub positions: Vec<f64>,
}

/// Full pose estimate: axis position from the widest gap (median over
/// several rows), an initial `(x_offset, scale)` from the innermost rings,
/// then the grid search.
pub fn locate_board(rings: &RingSet, height: usize, cfg: &LocateConfig) -> Result<(BoardPose, LocateReport)> {
    let mid = (height as f64 - 1.0) / 2.0;
    let positions = ring_scanline_positions(rings, mid)?;
    let center = find_center_projection(&positions)?;
    let points = subsample(rings, cfg.grid.max_points);

    let mut init: Option<(f64, f64, f64, f64)> = None; // loss, u, x, scale
    let consider = |init: &mut Option<(f64, f64, f64, f64)>, u: f64, x: f64, s: f64| {
        if s > 0.0 && x.is_finite() && u.is_finite() {
            let l = pose_loss(&points, u, x, s);
            if init.is_none_or(|b| l < b.0) {
                *init = Some((l, u, x, s));
            }
        }
    };

    if center.side == CenterSide::Inside {
        let n = cfg.scan_rows.max(1);
        let mut votes: Vec<f64> = (1..=n)
            .filter_map(|k| {
                let v = k as f64 * (height as f64 - 1.0) / (n + 1) as f64;
                let pos = ring_scanline_positions(rings, v).ok()?;
                let c = find_center_projection(&pos).ok()?;
                (c.side == CenterSide::Inside).then_some(c.u_center)
            })
            .collect();
        votes.push(center.u_center);
        let u0 = median(votes);
        let half = 0.5 * (positions[center.gap + 1] - positions[center.gap]);
        let cands = inside_candidates(&positions, (u0 - half, u0 + half), cfg.max_inner_ring);
        let g = estimate_scale(&positions)?;
        // Axis search either side of each candidate, then keep the best.
        let mut best: Option<(f64, BoardPose)> = None;
        for &(_, u, x, sc) in cands.iter().take(cfg.candidates.max(1)) {
            let init = BoardPose { u_center: u, x_offset: x, scale: sc, s_r: 1.0, z_origin: 0.0, sign_ambiguous: x > 0.0 };
            let pose = refine_inside(rings, &init, &cfg.grid, 0.25 * g)?;
            let l = pose_loss(&points, pose.u_center, pose.x_offset, pose.scale);
            if best.is_none_or(|b| l < b.0) {
                best = Some((l, pose));
            }
        }
        let pose = match best {
            Some((_, p)) => p,
            None => {
                let init = BoardPose { u_center: u0, x_offset: 0.0, scale: g, s_r: 1.0, z_origin: 0.0, sign_ambiguous: false };
                refine_inside(rings, &init, &cfg.grid, 0.25 * g)?
            }
        };
        let loss = pose_loss(&points, pose.u_center, pose.x_offset, pose.scale);
        return Ok((pose, LocateReport { center, loss, positions }));
    }
    // Three crossings nearest the axis side, nearest first.
    let near: Vec<f64> = if center.side == CenterSide::Right {
        positions.iter().rev().take(3).copied().collect()
    } else {
        positions.iter().take(3).copied().collect()
    };
    for k0 in 0..=cfg.max_inner_ring {
        if let Some((u, x, s)) = three_ring_pose([near[0], near[1], near[2]], k0 as f64) {
            consider(&mut init, u, x, s);
        }
    }
    let g = estimate_scale(&positions)?;
    if init.is_none() {
        let u = if center.side == CenterSide::Right { positions[positions.len() - 1] + g } else { positions[0] - g };
        consider(&mut init, u, 0.0, g);
    }
    let search_center = Some(2.0 * g);
    let (_, u, x, s) = init.ok_or_else(|| Error::Insufficient("no consistent initial pose".into()))?;
    let init_pose = BoardPose { u_center: u, x_offset: x, scale: s, s_r: 1.0, z_origin: 0.0, sign_ambiguous: x > 0.0 };
    let pose = brute_force_pose(rings, &init_pose, &cfg.grid, search_center)?;
    let loss = pose_loss(&points, pose.u_center, pose.x_offset, pose.scale);
    Ok((pose, LocateReport { center, loss, positions }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracer::RingTrace;

    fn vertical(x: f64, h: usize) -> RingTrace {
        RingTrace { points: (0..h).map(|y| [x, y as f64]).collect(), closed: false, seed_magnitude: 1.0 }
    }

    /// Vertical rings at integer ring coordinate for an undistorted pose.
    fn tangential(u_center: f64, x_offset: f64, scale: f64, width: f64, h: usize) -> RingSet {
        let mut xs = Vec::new();
        for k in 1..200 {
            let k = k as f64;
            if k <= x_offset {
                continue;
            }
            let d = scale * (k * k - x_offset * x_offset).sqrt();
            for u in [u_center - d, u_center + d] {
                if u >= 0.0 && u <= width - 1.0 {
                    xs.push(u);
                }
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        RingSet { rings: xs.into_iter().map(|x| vertical(x, h)).collect() }
    }

    #[test]
    fn scanline_positions() {
        let set = RingSet { rings: vec![vertical(20.0, 10), vertical(10.0, 10), vertical(30.0, 10)] };
        assert_eq!(ring_scanline_positions(&set, 4.5).unwrap(), vec![10.0, 20.0, 30.0]);
        let circle = RingTrace {
            points: (0..360).map(|k| {
                let a = (k as f64).to_radians();
                [100.0 + 50.0 * a.cos(), 60.0 + 50.0 * a.sin()]
            }).collect(),
            closed: true,
            seed_magnitude: 1.0,
        };
        let set = RingSet { rings: vec![circle, vertical(5.0, 120)] };
        let xs = ring_scanline_positions(&set, 60.0).unwrap();
        assert_eq!(xs.len(), 3);
        assert!((xs[1] - 50.0).abs() < 1e-9 && (xs[2] - 150.0).abs() < 1e-9);
        assert!(ring_scanline_positions(&RingSet { rings: vec![vertical(1.0, 5)] }, 2.0).is_err());
    }

    fn from_gaps(gaps: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0];
        for g in gaps {
            p.push(p.last().unwrap() + g);
        }
        p
    }

    #[test]
    fn center_from_symmetric_gaps() {
        let pos = from_gaps(&[4.0, 6.0, 12.0, 6.0, 4.0]);
        let c = find_center_projection(&pos).unwrap();
        assert_eq!(c.u_center, 16.0);
        assert_eq!(c.score, 1.0);
        assert_eq!(c.side, CenterSide::Inside);
    }

    #[test]
    fn increasing_gaps_put_the_center_right() {
        let pos = from_gaps(&[3.0, 4.0, 5.0, 6.0, 8.0]);
        let c = find_center_projection(&pos).unwrap();
        assert!(c.outside());
        assert_eq!(c.side, CenterSide::Right);
    }

    #[test]
    fn scale_from_gaps() {
        assert_eq!(estimate_scale(&from_gaps(&[10.0, 10.0, 30.0, 10.0, 10.0])).unwrap(), 10.0);
        assert_eq!(estimate_scale(&from_gaps(&[8.0, 9.0, 10.0, 11.0])).unwrap(), 9.5);
    }

    #[test]
    fn loss_is_even_in_x_offset() {
        let pts: Vec<[f64; 2]> = (0..50).map(|k| [k as f64 * 3.7, 0.0]).collect();
        for x in [0.0, 0.3, 2.5, 7.1] {
            assert_eq!(pose_loss(&pts, 41.0, x, 11.0), pose_loss(&pts, 41.0, -x, 11.0));
        }
    }

    #[test]
    fn exact_rings_recover_the_pose() {
        let set = tangential(250.0, 2.5, 31.0, 512.0, 64);
        let init = BoardPose { u_center: 250.0, x_offset: 3.1, scale: 31.0 * 1.1, s_r: 1.0, z_origin: 0.0, sign_ambiguous: true };
        let pose = brute_force_pose(&set, &init, &PoseGrid { refine_levels: 0, ..PoseGrid::default() }, None).unwrap();
        assert!((pose.x_offset - 2.5).abs() <= 0.05 + 1e-9, "{pose:?}");
        assert!((pose.scale / 31.0 - 1.0).abs() <= 0.01, "{pose:?}");
        assert_eq!(pose.z_origin, 0.0);
    }

    #[test]
    fn full_locate_inside_and_outside() {
        let set = tangential(256.0, 2.5, 31.0, 512.0, 64);
        let (pose, rep) = locate_board(&set, 64, &LocateConfig::default()).unwrap();
        assert_eq!(rep.center.side, CenterSide::Inside);
        assert!((pose.u_center - 256.0).abs() < 0.5);
        assert!((pose.x_offset - 2.5).abs() < 0.02 && (pose.scale / 31.0 - 1.0).abs() < 0.002, "{pose:?}");

        let set = tangential(330.0, 1.5, 20.0, 300.0, 64);
        let (pose, rep) = locate_board(&set, 64, &LocateConfig::default()).unwrap();
        assert_eq!(rep.center.side, CenterSide::Right);
        assert!((pose.u_center - 330.0).abs() < 2.0 && (pose.x_offset - 1.5).abs() < 0.25, "{pose:?}");
        assert!((pose.scale / 20.0 - 1.0).abs() < 0.02, "{pose:?}");
    }

    #[test]
    fn through_the_axis() {
        let set = tangential(200.0, 0.0, 25.0, 400.0, 32);
        let (pose, _) = locate_board(&set, 32, &LocateConfig::default()).unwrap();
        assert!((pose.u_center - 200.0).abs() < 0.5 && pose.x_offset < 0.05 && (pose.scale / 25.0 - 1.0).abs() < 0.002, "{pose:?}");
    }

    #[test]
    fn three_ring_closed_form() {
        let (u, x, s) = (330.0, 1.5, 20.0);
        let d = |k: f64| s * (k * k - x * x).sqrt();
        let (a, b, c) = three_ring_pose([u - d(2.0), u - d(3.0), u - d(4.0)], 2.0).unwrap();
        assert!((a - u).abs() < 1e-9 && (b - x).abs() < 1e-9 && (c - s).abs() < 1e-9);
    }
}
