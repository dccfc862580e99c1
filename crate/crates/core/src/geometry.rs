//! Small fixed-size geometry on the torus and its tangent bundle.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A point of the two-torus, coordinates `(x, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub theta: f64,
}

impl Point2 {
    pub const fn new(x: f64, theta: f64) -> Self {
        Self { x, theta }
    }

    /// Reduce both coordinates into `[0, 1)`.
    pub fn wrapped(self) -> Self {
        Self::new(wrap01(self.x), wrap01(self.theta))
    }
}

/// Reduce a real number into `[0, 1)`.
#[inline]
pub fn wrap01(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed representative of `v` modulo one in `[-1/2, 1/2)`.
#[inline]
pub fn centered(v: f64) -> f64 {
    let r = wrap01(v + 0.5) - 0.5;
    r
}

/// Euclidean distance on the flat torus.
pub fn torus_distance(a: Point2, b: Point2) -> f64 {
    centered(a.x - b.x).hypot(centered(a.theta - b.theta))
}

/// Row-major 2x2 real matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            m: [[a, b], [c, d]],
        }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// Inverse, or `None` when singular.
    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    /// Slope of the image of the line with slope `s` (direction `(1, s)`).
    #[inline]
    pub fn push_slope(&self, s: f64) -> f64 {
        let num = self.m[1][0] + self.m[1][1] * s;
        let den = self.m[0][0] + self.m[0][1] * s;
        num / den
    }

    /// Inf and sup of `|A u| / |u|` over directions `u` whose angle lies in the
    /// arc `[center - half, center + half]`.
    pub fn stretch_range_on_arc(&self, center: f64, half: f64) -> (f64, f64) {
        let s = self.transpose().mul(self);
        let (s11, s12, s22) = (s.m[0][0], s.m[0][1], s.m[1][1]);
        let q = |phi: f64| {
            let (sn, cs) = phi.sin_cos();
            (s11 * cs * cs + 2.0 * s12 * sn * cs + s22 * sn * sn).max(0.0)
        };
        let mut lo = q(center - half).min(q(center + half));
        let mut hi = q(center - half).max(q(center + half));
        // critical directions of the quadratic form, repeated with period pi/2
        let base = 0.5 * (2.0 * s12).atan2(s11 - s22);
        for k in -4..=4 {
            let phi = base + k as f64 * PI / 2.0;
            if (phi - center).abs() <= half {
                let v = q(phi);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo.sqrt(), hi.sqrt())
    }
}

/// A line through the origin of the tangent plane, stored as an angle in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveLine {
    pub angle: f64,
}

impl ProjectiveLine {
    pub fn from_angle(angle: f64) -> Self {
        let a = angle.rem_euclid(PI);
        Self {
            angle: if a >= PI { 0.0 } else { a },
        }
    }

    pub fn from_slope(s: f64) -> Self {
        Self::from_angle(s.atan())
    }

    pub fn from_vector(v: [f64; 2]) -> crate::Result<Self> {
        if v[0] == 0.0 && v[1] == 0.0 {
            return Err(crate::SvphError::DegenerateDirection);
        }
        Ok(Self::from_angle(v[1].atan2(v[0])))
    }

    /// Slope `eta / xi` of the line; infinite for the vertical line.
    pub fn slope(&self) -> f64 {
        if (self.angle - PI / 2.0).abs() < 1e-300 {
            f64::INFINITY
        } else {
            self.angle.tan()
        }
    }

    pub fn horizontal() -> Self {
        Self { angle: 0.0 }
    }
}

/// Closed interval of slopes `[lo, hi]`, used for cones around the horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SlopeInterval {
    pub fn symmetric(half: f64) -> Self {
        Self {
            lo: -half,
            hi: half,
        }
    }

    /// Image of the interval under a matrix with positive determinant whose
    /// pole lies outside the interval.
    pub fn push(&self, a: &Mat2) -> Self {
        let p = a.push_slope(self.lo);
        let q = a.push_slope(self.hi);
        Self {
            lo: p.min(q),
            hi: p.max(q),
        }
    }

    pub fn contains(&self, s: f64) -> bool {
        self.lo <= s && s <= self.hi
    }

    pub fn intersects(&self, o: &SlopeInterval) -> bool {
        self.lo <= o.hi && o.lo <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_and_center() {
        assert_eq!(wrap01(1.25), 0.25);
        assert_eq!(wrap01(-0.25), 0.75);
        assert_eq!(wrap01(-1e-18), 0.0);
        assert!((centered(0.9) + 0.1).abs() < 1e-15);
        assert!(
            (torus_distance(Point2::new(0.95, 0.0), Point2::new(0.05, 0.0)) - 0.1).abs() < 1e-12
        );
    }

    #[test]
    fn mat_inverse_roundtrip() {
        let a = Mat2::new(3.0, 0.2, -0.1, 1.1);
        let p = a.mul(&a.inverse().unwrap());
        assert!((p.m[0][0] - 1.0).abs() < 1e-14 && p.m[0][1].abs() < 1e-14);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn stretch_range_matches_scan() {
        let a = Mat2::new(2.5, 0.3, 0.4, 0.9);
        let (lo, hi) = a.stretch_range_on_arc(0.2, 0.7);
        let mut slo = f64::INFINITY;
        let mut shi: f64 = 0.0;
        for i in 0..=20000 {
            let phi = 0.2 - 0.7 + 1.4 * i as f64 / 20000.0;
            let v = a.apply([phi.cos(), phi.sin()]);
            let r = v[0].hypot(v[1]);
            slo = slo.min(r);
            shi = shi.max(r);
        }
        assert!((lo - slo).abs() < 1e-7 && (hi - shi).abs() < 1e-7);
    }

    #[test]
    fn projective_line_from_zero_vector() {
        assert!(matches!(
            ProjectiveLine::from_vector([0.0, 0.0]),
            Err(crate::SvphError::DegenerateDirection)
        ));
        let l = ProjectiveLine::from_vector([-1.0, -1.0]).unwrap();
        assert!((l.slope() - 1.0).abs() < 1e-14);
    }
}
