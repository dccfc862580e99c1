//! The skew-perturbed torus map `F(x, theta) = (d x + f(x, theta), theta + eps * omega(x, theta)) mod 1`.

use crate::error::{Result, SvphError};
use crate::geometry::{wrap01, Mat2, Point2};
use crate::trig::TrigPoly2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Description of a map: integer degree, periodic perturbation of the fast
/// coordinate, slow drift `omega` and its strength `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub degree: u32,
    pub f_pert: TrigPoly2,
    pub omega: TrigPoly2,
    pub epsilon: f64,
}

/// First partial derivatives at a point. `ox`, `ot` are the partials of the
/// unscaled drift `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub fx: f64,
    pub ft: f64,
    pub ox: f64,
    pub ot: f64,
}

impl MapSpec {
    pub fn new(degree: u32, f_pert: TrigPoly2, omega: TrigPoly2, epsilon: f64) -> Result<Self> {
        let m = Self {
            degree,
            f_pert,
            omega,
            epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 {
            return Err(SvphError::InvalidMap(format!(
                "degree must be at least 2, got {}",
                self.degree
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(SvphError::InvalidMap(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MapSpec =
            serde_json::from_str(s).map_err(|e| SvphError::InvalidMap(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serialisation cannot fail")
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// Doubling map times identity.
    pub fn e0() -> Self {
        Self {
            degree: 2,
            f_pert: TrigPoly2::zero(),
            omega: TrigPoly2::zero(),
            epsilon: 0.0,
        }
    }

    /// Tripling map with a sine perturbation and drift `-sin(2 pi theta) + 0.3 cos(2 pi x)`.
    pub fn e1(epsilon: f64) -> Self {
        let mut f = TrigPoly2::zero();
        f.add_sin(1, 0, 0.1);
        let mut w = TrigPoly2::zero();
        w.add_sin(0, 1, -1.0).add_cos(1, 0, 0.3);
        Self {
            degree: 3,
            f_pert: f,
            omega: w,
            epsilon,
        }
    }

    /// Doubling map whose drift `(sin 4 pi x - sin 2 pi x) / 2 pi` is a coboundary.
    pub fn e2() -> Self {
        let mut w = TrigPoly2::zero();
        w.add_sin(2, 0, 1.0 / TAU).add_sin(1, 0, -1.0 / TAU);
        Self {
            degree: 2,
            f_pert: TrigPoly2::zero(),
            omega: w,
            epsilon: 0.05,
        }
    }

    /// The map on the universal cover (no reduction modulo one).
    #[inline]
    pub fn lift(&self, x: f64, t: f64) -> (f64, f64) {
        (
            self.degree as f64 * x + self.f_pert.value(x, t),
            t + self.epsilon * self.omega.value(x, t),
        )
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        let (a, b) = self.lift(p.x, p.theta);
        Point2::new(wrap01(a), wrap01(b))
    }

    pub fn iterate(&self, p: Point2, n: usize) -> Point2 {
        (0..n).fold(p, |q, _| self.apply(q))
    }

    /// The fast map `f_theta(x) = d x + f_pert(x, theta)` on the lift.
    #[inline]
    pub fn fiber_lift(&self, x: f64, t: f64) -> f64 {
        self.degree as f64 * x + self.f_pert.value(x, t)
    }

    #[inline]
    pub fn partials(&self, x: f64, t: f64) -> Partials {
        let (_, fx, ft) = self.f_pert.grad(x, t);
        let (_, ox, ot) = self.omega.grad(x, t);
        Partials {
            fx: self.degree as f64 + fx,
            ft,
            ox,
            ot,
        }
    }

    #[inline]
    pub fn jacobian(&self, p: Point2) -> Mat2 {
        let q = self.partials(p.x, p.theta);
        let e = self.epsilon;
        Mat2::new(q.fx, q.ft, e * q.ox, 1.0 + e * q.ot)
    }

    /// Endpoint of the orbit and `D_p F^n`.
    pub fn orbit_jacobian(&self, p: Point2, n: usize) -> (Point2, Mat2) {
        let mut m = Mat2::IDENTITY;
        let mut q = p;
        for _ in 0..n {
            m = self.jacobian(q).mul(&m);
            q = self.apply(q);
        }
        (q, m)
    }

    /// Error if `det DF <= 0` anywhere on an `grid x grid` sampling.
    pub fn check_orientation(&self, grid: usize) -> Result<()> {
        for i in 0..grid {
            for j in 0..grid {
                let p = Point2::new(i as f64 / grid as f64, j as f64 / grid as f64);
                let det = self.jacobian(p).det();
                if !(det > 0.0) {
                    return Err(SvphError::DegenerateJacobian {
                        x: p.x,
                        theta: p.theta,
                        det,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sup-norm estimates of the derivatives on a uniform grid, widened by a
    /// Lipschitz slack so the upper ends are guaranteed bounds.
    pub fn derivative_norms(&self, grid: usize) -> DerivativeNorms {
        let grid = grid.max(1);
        let h = 1.0 / grid as f64;
        let e = self.epsilon;
        let fx_poly = self.f_pert.dx();
        let ft_poly = self.f_pert.dt();
        let ox_poly = self.omega.dx();
        let ot_poly = self.omega.dt();
        let (mut fx_min, mut fx_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ft_max, mut ox_max, mut ot_max, mut ratio_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut det_min = f64::INFINITY;
        for i in 0..grid {
            let x = i as f64 * h;
            for j in 0..grid {
                let t = j as f64 * h;
                let q = self.partials(x, t);
                fx_min = fx_min.min(q.fx);
                fx_max = fx_max.max(q.fx);
                ft_max = ft_max.max(q.ft.abs());
                ox_max = ox_max.max(q.ox.abs());
                ot_max = ot_max.max(q.ot.abs());
                ratio_max = ratio_max.max((q.ft / q.fx).abs());
                det_min = det_min.min(q.fx * (1.0 + e * q.ot) - q.ft * e * q.ox);
            }
        }
        let s_fx = 0.5 * h * fx_poly.lipschitz_bound();
        let s_ft = 0.5 * h * ft_poly.lipschitz_bound();
        let s_ox = 0.5 * h * ox_poly.lipschitz_bound();
        let s_ot = 0.5 * h * ot_poly.lipschitz_bound();
        let lambda = Interval::new(fx_min - s_fx, fx_min);
        let theta_f = Interval::new(ft_max, (ft_max + s_ft).min(ft_poly.sup_bound()));
        let ratio_hi = if lambda.lo > 0.0 {
            theta_f.hi / lambda.lo
        } else {
            f64::INFINITY
        };
        DerivativeNorms {
            grid,
            lambda,
            big_lambda: Interval::new(fx_max, fx_max + s_fx),
            theta_f,
            x_omega: Interval::new(e * ox_max, e * (ox_max + s_ox).min(ox_poly.sup_bound())),
            theta_omega: Interval::new(e * ot_max, e * (ot_max + s_ot).min(ot_poly.sup_bound())),
            ratio_tf: Interval::new(ratio_max, ratio_hi.max(ratio_max)),
            omega_x_unscaled: (ox_max + s_ox).min(ox_poly.sup_bound()),
            omega_t_unscaled: (ot_max + s_ot).min(ot_poly.sup_bound()),
            det_min,
        }
    }
}

/// A real quantity known to lie in `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn exact(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Sup-norm data for the derivatives, with `omega` already multiplied by epsilon
/// unless the field name says otherwise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DerivativeNorms {
    pub grid: usize,
    /// `inf d_x f`
    pub lambda: Interval,
    /// `sup d_x f`
    pub big_lambda: Interval,
    pub theta_f: Interval,
    pub x_omega: Interval,
    pub theta_omega: Interval,
    /// `sup |d_theta f / d_x f|`
    pub ratio_tf: Interval,
    pub omega_x_unscaled: f64,
    pub omega_t_unscaled: f64,
    pub det_min: f64,
}

/// Outcome of the determinant sandwich test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetGrowthReport {
    pub n: usize,
    pub samples: usize,
    pub lambda: f64,
    pub big_lambda: f64,
    /// `min det DF^n / lambda^n` over the samples
    pub min_ratio: f64,
    /// `max det DF^n / Lambda^n` over the samples
    pub max_ratio: f64,
    /// Smallest `c` with `exp(-c eps n) lambda^n <= det <= exp(c eps n) Lambda^n` on the samples.
    pub c_bar: f64,
    /// `sup |psi|`, where `det DF = d_x f (1 + eps psi)`.
    pub psi_sup: f64,
}

/// Check `exp(-c eps n) lambda^n <= det DF^n <= exp(c eps n) Lambda^n` at random points.
pub fn det_growth_check(
    map: &MapSpec,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<DetGrowthReport> {
    let norms = map.derivative_norms(256);
    let lam = norms.lambda.lo;
    let big = norms.big_lambda.hi;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut psi_sup: f64 = 0.0;
    for _ in 0..samples {
        let p = Point2::new(rng.gen::<f64>(), rng.gen::<f64>());
        let mut q = p;
        let mut log_det = 0.0;
        for _ in 0..n {
            let d = map.partials(q.x, q.theta);
            let det = map.jacobian(q).det();
            if !(det > 0.0) {
                return Err(SvphError::DegenerateJacobian {
                    x: q.x,
                    theta: q.theta,
                    det,
                });
            }
            psi_sup = psi_sup.max((d.ot - d.ox * d.ft / d.fx).abs());
            log_det += det.ln();
            q = map.apply(q);
        }
        min_ratio = min_ratio.min((log_det - n as f64 * lam.ln()).exp());
        max_ratio = max_ratio.max((log_det - n as f64 * big.ln()).exp());
    }
    let en = map.epsilon * n as f64;
    let worst = (-min_ratio.ln()).max(max_ratio.ln()).max(0.0);
    let c_bar = if worst == 0.0 {
        0.0
    } else if en > 0.0 {
        worst / en
    } else {
        f64::INFINITY
    };
    let scale = 10.0 * (norms.omega_x_unscaled + norms.omega_t_unscaled);
    if c_bar > scale && worst > 1e-12 {
        return Err(SvphError::ViolatedBound(format!(
            "determinant growth needs c = {c_bar:.4}, above 10 |grad omega| = {scale:.4}"
        )));
    }
    Ok(DetGrowthReport {
        n,
        samples,
        lambda: lam,
        big_lambda: big,
        min_ratio,
        max_ratio,
        c_bar,
        psi_sup,
    })
}
