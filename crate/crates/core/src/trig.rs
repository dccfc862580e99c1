//! Real trigonometric polynomials on the two-torus.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// One Fourier mode `a cos(2 pi (k x + l theta)) + b sin(2 pi (k x + l theta))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: i32,
    pub l: i32,
    pub a: f64,
    pub b: f64,
}

/// Value and derivatives up to order two at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dt: f64,
    pub dxx: f64,
    pub dxt: f64,
    pub dtt: f64,
}

/// `g(x, theta) = sum a[k,l] cos(2 pi (k x + l theta)) + b[k,l] sin(2 pi (k x + l theta))`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "TrigJson", into = "TrigJson")]
pub struct TrigPoly2 {
    modes: Vec<Mode>,
}

#[derive(Serialize, Deserialize)]
struct TrigJson {
    #[serde(rename = "K", default)]
    k: i32,
    #[serde(default)]
    a: Vec<(i32, i32, f64)>,
    #[serde(default)]
    b: Vec<(i32, i32, f64)>,
}

impl TryFrom<TrigJson> for TrigPoly2 {
    type Error = String;
    fn try_from(j: TrigJson) -> Result<Self, String> {
        let mut p = TrigPoly2::zero();
        for &(k, l, v) in &j.a {
            check_mode(j.k, k, l, v)?;
            p.add_cos(k, l, v);
        }
        for &(k, l, v) in &j.b {
            check_mode(j.k, k, l, v)?;
            p.add_sin(k, l, v);
        }
        Ok(p)
    }
}

fn check_mode(kmax: i32, k: i32, l: i32, v: f64) -> Result<(), String> {
    if !v.is_finite() {
        return Err(format!("non-finite coefficient at ({k},{l})"));
    }
    if kmax > 0 && (k.abs() > kmax || l.abs() > kmax) {
        return Err(format!("mode ({k},{l}) exceeds declared K = {kmax}"));
    }
    Ok(())
}

impl From<TrigPoly2> for TrigJson {
    fn from(p: TrigPoly2) -> Self {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for m in &p.modes {
            if m.a != 0.0 {
                a.push((m.k, m.l, m.a));
            }
            if m.b != 0.0 {
                b.push((m.k, m.l, m.b));
            }
        }
        TrigJson {
            k: p.max_frequency() as i32,
            a,
            b,
        }
    }
}

impl TrigPoly2 {
    pub fn zero() -> Self {
        Self { modes: Vec::new() }
    }

    pub fn from_modes(modes: Vec<Mode>) -> Self {
        let mut p = Self::zero();
        for m in modes {
            p.add_cos(m.k, m.l, m.a);
            p.add_sin(m.k, m.l, m.b);
        }
        p
    }

    /// Normalise `(k, l)` so that the pair `(k, l)` and `(-k, -l)` share one entry.
    fn slot(&mut self, k: i32, l: i32) -> (usize, f64) {
        let (k, l, sign) = if k < 0 || (k == 0 && l < 0) {
            (-k, -l, -1.0)
        } else {
            (k, l, 1.0)
        };
        if let Some(i) = self.modes.iter().position(|m| m.k == k && m.l == l) {
            (i, sign)
        } else {
            self.modes.push(Mode {
                k,
                l,
                a: 0.0,
                b: 0.0,
            });
            (self.modes.len() - 1, sign)
        }
    }

    pub fn add_cos(&mut self, k: i32, l: i32, a: f64) -> &mut Self {
        if a != 0.0 {
            let (i, _) = self.slot(k, l);
            self.modes[i].a += a;
        }
        self
    }

    pub fn add_sin(&mut self, k: i32, l: i32, b: f64) -> &mut Self {
        if b != 0.0 {
            let (i, sign) = self.slot(k, l);
            self.modes[i].b += sign * b;
        }
        self
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_zero(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.a == 0.0 && (m.b == 0.0 || (m.k == 0 && m.l == 0)))
    }

    /// True when no mode depends on theta.
    pub fn is_theta_independent(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.l == 0 || (m.a == 0.0 && m.b == 0.0))
    }

    /// True when no mode depends on x.
    pub fn is_x_independent(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.k == 0 || (m.a == 0.0 && m.b == 0.0))
    }

    pub fn max_frequency(&self) -> usize {
        self.modes
            .iter()
            .filter(|m| m.a != 0.0 || m.b != 0.0)
            .map(|m| m.k.unsigned_abs().max(m.l.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .map(|m| Mode {
                    a: m.a * c,
                    b: m.b * c,
                    ..*m
                })
                .collect(),
        }
    }

    #[inline]
    pub fn value(&self, x: f64, t: f64) -> f64 {
        let mut s = 0.0;
        for m in &self.modes {
            let (sn, cs) = (TAU * (m.k as f64 * x + m.l as f64 * t)).sin_cos();
            s += m.a * cs + m.b * sn;
        }
        s
    }

    /// Value and first partial derivatives.
    #[inline]
    pub fn grad(&self, x: f64, t: f64) -> (f64, f64, f64) {
        let (mut v, mut gx, mut gt) = (0.0, 0.0, 0.0);
        for m in &self.modes {
            let (sn, cs) = (TAU * (m.k as f64 * x + m.l as f64 * t)).sin_cos();
            v += m.a * cs + m.b * sn;
            let d = -m.a * sn + m.b * cs;
            gx += TAU * m.k as f64 * d;
            gt += TAU * m.l as f64 * d;
        }
        (v, gx, gt)
    }

    pub fn jet(&self, x: f64, t: f64) -> Jet2 {
        let mut j = Jet2::default();
        for m in &self.modes {
            let (sn, cs) = (TAU * (m.k as f64 * x + m.l as f64 * t)).sin_cos();
            let (kk, ll) = (TAU * m.k as f64, TAU * m.l as f64);
            let v = m.a * cs + m.b * sn;
            let d = -m.a * sn + m.b * cs;
            j.v += v;
            j.dx += kk * d;
            j.dt += ll * d;
            j.dxx -= kk * kk * v;
            j.dxt -= kk * ll * v;
            j.dtt -= ll * ll * v;
        }
        j
    }

    /// Partial derivative polynomial in x.
    pub fn dx(&self) -> Self {
        self.derivative(1, 0)
    }

    /// Partial derivative polynomial in theta.
    pub fn dt(&self) -> Self {
        self.derivative(0, 1)
    }

    fn derivative(&self, ox: i32, ot: i32) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let w = TAU * (ox * m.k + ot * m.l) as f64;
                // d/dz (a cos + b sin) = w (b cos - a sin)
                Mode {
                    k: m.k,
                    l: m.l,
                    a: w * m.b,
                    b: -w * m.a,
                }
            })
            .filter(|m| m.a != 0.0 || m.b != 0.0)
            .collect();
        Self { modes }
    }

    /// Upper bound for the sup norm from the coefficients.
    pub fn sup_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                if m.k == 0 && m.l == 0 {
                    m.a.abs()
                } else {
                    m.a.hypot(m.b)
                }
            })
            .sum()
    }

    /// Bound on `sup |dg/dx| + sup |dg/dtheta|`, a Lipschitz constant for the l-infinity metric.
    pub fn lipschitz_bound(&self) -> f64 {
        self.dx().sup_bound() + self.dt().sup_bound()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrigPoly2 {
        let mut p = TrigPoly2::zero();
        p.add_sin(1, 0, 0.1)
            .add_cos(2, -1, 0.3)
            .add_sin(0, 1, -0.7)
            .add_cos(0, 0, 0.05);
        p
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = sample();
        let h = 1e-6;
        for &(x, t) in &[(0.1, 0.2), (0.77, 0.31), (0.5, 0.99)] {
            let j = p.jet(x, t);
            let fdx = (p.value(x + h, t) - p.value(x - h, t)) / (2.0 * h);
            let fdt = (p.value(x, t + h) - p.value(x, t - h)) / (2.0 * h);
            assert!((j.dx - fdx).abs() < 1e-7);
            assert!((j.dt - fdt).abs() < 1e-7);
            let (_, gx, _) = p.grad(x, t + h);
            let (_, gx2, _) = p.grad(x, t - h);
            assert!((j.dxt - (gx - gx2) / (2.0 * h)).abs() < 1e-6);
            assert!((p.dx().value(x, t) - j.dx).abs() < 1e-12);
            assert!((p.dt().value(x, t) - j.dt).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_modes_fold_onto_positive() {
        let mut p = TrigPoly2::zero();
        p.add_sin(-1, 0, 1.0);
        assert!((p.value(0.25, 0.0) + 1.0).abs() < 1e-15);
        p.add_sin(1, 0, 1.0);
        assert!(p.is_zero());
    }

    #[test]
    fn json_roundtrip() {
        let p = sample();
        let s = serde_json::to_string(&p).unwrap();
        let q: TrigPoly2 = serde_json::from_str(&s).unwrap();
        for &(x, t) in &[(0.3, 0.4), (0.9, 0.1)] {
            assert!((p.value(x, t) - q.value(x, t)).abs() < 1e-15);
        }
    }

    #[test]
    fn json_rejects_modes_beyond_declared_k() {
        let r: Result<TrigPoly2, _> = serde_json::from_str(r#"{"K":1,"a":[[3,0,1.0]],"b":[]}"#);
        assert!(r.is_err());
    }

    #[test]
    fn bounds_dominate_samples() {
        let p = sample();
        let sb = p.sup_bound();
        for i in 0..50 {
            for j in 0..50 {
                assert!(p.value(i as f64 / 50.0, j as f64 / 50.0).abs() <= sb + 1e-15);
            }
        }
    }
}
