//! Periodic cubic splines on uniform grids.

/// Interpolating cubic spline of a one-periodic function sampled at `i / m`.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    y: Vec<f64>,
    m2: Vec<f64>,
    h: f64,
}

impl PeriodicSpline {
    pub fn new(y: Vec<f64>) -> Self {
        let m = y.len();
        assert!(m >= 3, "periodic spline needs at least three samples");
        let h = 1.0 / m as f64;
        let rhs: Vec<f64> = (0..m)
            .map(|i| 6.0 * (y[(i + 1) % m] - 2.0 * y[i] + y[(i + m - 1) % m]) / (h * h))
            .collect();
        // the cyclic system M_{i-1} + 4 M_i + M_{i+1} = rhs is diagonally dominant;
        // Jacobi sweeps contract by a factor of two each pass
        let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut m2 = vec![0.0; m];
        for _ in 0..200 {
            let next: Vec<f64> = (0..m)
                .map(|i| (rhs[i] - m2[(i + m - 1) % m] - m2[(i + 1) % m]) / 4.0)
                .collect();
            let delta = next
                .iter()
                .zip(&m2)
                .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            m2 = next;
            if delta <= 1e-16 * scale {
                break;
            }
        }
        Self { y, m2, h }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn locate(&self, t: f64) -> (usize, usize, f64, f64) {
        let m = self.y.len();
        let s = t.rem_euclid(1.0) * m as f64;
        let i = (s.floor() as usize).min(m - 1);
        let u = (s - i as f64) * self.h;
        (i, (i + 1) % m, self.h - u, u)
    }

    /// Value and first three derivatives at `t`.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        let (i, j, a, b) = self.locate(t);
        let h = self.h;
        let (mi, mj) = (self.m2[i], self.m2[j]);
        let (yi, yj) = (self.y[i], self.y[j]);
        let ci = yi / h - mi * h / 6.0;
        let cj = yj / h - mj * h / 6.0;
        [
            mi * a * a * a / (6.0 * h) + mj * b * b * b / (6.0 * h) + ci * a + cj * b,
            -mi * a * a / (2.0 * h) + mj * b * b / (2.0 * h) - ci + cj,
            mi * a / h + mj * b / h,
            (mj - mi) / h,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn reproduces_sine_and_derivatives() {
        let m = 256;
        let y: Vec<f64> = (0..m).map(|i| (TAU * i as f64 / m as f64).sin()).collect();
        let s = PeriodicSpline::new(y);
        for &t in &[0.0, 0.123, 0.5, 0.999] {
            let [v, d1, d2, _] = s.eval(t);
            assert!((v - (TAU * t).sin()).abs() < 1e-7);
            assert!((d1 - TAU * (TAU * t).cos()).abs() < 1e-3);
            assert!((d2 + TAU * TAU * (TAU * t).sin()).abs() < 0.05);
        }
    }

    #[test]
    fn interpolates_nodes() {
        let y = vec![0.0, 1.0, -2.0, 0.5, 3.0];
        let s = PeriodicSpline::new(y.clone());
        for (i, v) in y.iter().enumerate() {
            assert!((s.eval(i as f64 / 5.0)[0] - v).abs() < 1e-12);
        }
    }
}
