//! Cyclic arithmetic on phase values.

use std::f64::consts::{PI, TAU};

/// Maps any angle to `(-pi, pi]`.
///
/// Angles already in range come back unchanged, and the reduction is a
/// single fused multiply-add, so `wrap(a + 2 pi k) == wrap(a)` bitwise
/// whenever `a + 2 pi k` is itself exact.
#[inline]
pub fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (-TAU).mul_add((a / TAU).round(), a);
    if w <= -PI {
        w + TAU
    } else if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Shortest signed difference `a - b` on the circle, in `(-pi, pi]`.
/// A difference of exactly half a turn resolves to `+pi`.
#[inline]
pub fn wrapped_diff(a: f64, b: f64) -> f64 {
    wrap(a - b)
}

/// Inverse of `wrap(2 pi t)` for `t` in `[0, 1)`.
#[inline]
pub fn phase_to_frac(phase: f64) -> f64 {
    let t = phase / TAU;
    if t < 0.0 {
        t + 1.0
    } else {
        t
    }
}

/// Distance between two 180°-ambiguous orientations given as angles, in
/// `[0, pi/2]`.
#[inline]
pub fn axial_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn wrapped_diff_examples() {
        assert_eq!(wrapped_diff(FRAC_PI_2, FRAC_PI_2), 0.0);
        assert!((wrapped_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert_eq!(wrapped_diff(PI, 0.0), PI);
        assert_eq!(wrapped_diff(0.0, PI), PI);
        assert_eq!(wrap(-PI), PI);
    }

    #[test]
    fn wrap_reduces_far_angles() {
        assert_eq!(wrap(0.3), 0.3);
        assert!((wrap(0.3 + 40.0 * TAU) - 0.3).abs() < 1e-12);
        assert!((wrap(-7.0) - (TAU - 7.0)).abs() < 1e-15);
        assert_eq!(wrap(3.0 * PI), PI);
        assert!(wrap(f64::NAN).is_nan());
    }

    #[test]
    fn frac_inverse() {
        for t in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9999] {
            assert!((phase_to_frac(wrap(TAU * t)) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn axial_distance_folds() {
        assert!((axial_distance(0.1, PI - 0.1) - 0.2).abs() < 1e-12);
        assert!((axial_distance(0.0, FRAC_PI_2) - FRAC_PI_2).abs() < 1e-12);
        assert!(axial_distance(1.0, 1.0 + PI) < 1e-12);
    }
}
