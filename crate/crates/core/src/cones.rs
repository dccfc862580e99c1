//! Unstable and central cone fields, hyperbolicity constants and the
//! sufficient conditions that make the cone fields invariant.

use crate::branches::{inverse_branches, CentralCurve};
use crate::error::{Result, SvphError};
use crate::geometry::{Mat2, Point2};
use crate::map::{DerivativeNorms, MapSpec};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Half-widths of the unstable cone `{|eta| <= chi_u |xi|}` and of the central
/// cone `{|xi| <= chi_c |eta|}`, together with the invariance data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub chi_u: f64,
    pub chi_c: f64,
    /// Contraction factor: `|Xi(p, +-chi_u)| <= iota chi_u` and likewise for the central cone.
    pub iota_star: f64,
    /// Relative shrinking applied to both cones in strict tests.
    pub eps_cone: f64,
    /// Fast-slow half-width `2 sup |d_x omega|`, unscaled.
    pub u_star: f64,
}

impl ConeParams {
    /// Half-width of the shrunk unstable cone.
    pub fn chi_u_strict(&self) -> f64 {
        self.chi_u * (1.0 - self.eps_cone)
    }

    pub fn chi_c_strict(&self) -> f64 {
        self.chi_c * (1.0 - self.eps_cone)
    }

    pub fn invariant(&self) -> bool {
        self.iota_star < 1.0
    }
}

/// Constants controlling growth of unstable and central vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicityConstants {
    pub lambda: f64,
    pub big_lambda: f64,
    pub a: f64,
    pub b: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub mu: f64,
    /// Multiplicative slack of the growth sandwich, fitted on a grid.
    pub c_star: f64,
    pub r: u32,
    pub zeta_r: f64,
    pub alpha: f64,
}

/// `6 (r + 1)!`
pub fn zeta(r: u32) -> f64 {
    6.0 * (1..=(r as u64 + 1)).map(|k| k as f64).product::<f64>()
}

/// Unstable slope map in the fast-slow normalisation: `D_p F (1, eps u)` has slope `eps Xi(p, u)`.
#[inline]
pub fn xi_unstable(map: &MapSpec, p: Point2, u: f64) -> f64 {
    let q = map.partials(p.x, p.theta);
    let e = map.epsilon;
    (q.ox + e * u * q.ot + u) / (q.fx + e * u * q.ft)
}

/// Actual slope of `D_p F (1, s)`.
#[inline]
pub fn slope_image(map: &MapSpec, p: Point2, s: f64) -> f64 {
    map.jacobian(p).push_slope(s)
}

/// Central slope map: if `(c, 1)` is a vector at `F(p)`, `(D_p F)^{-1} (c, 1)` is parallel to `(Xi^-(p, c), 1)`.
#[inline]
pub fn xi_center(map: &MapSpec, p: Point2, c: f64) -> f64 {
    let q = map.partials(p.x, p.theta);
    let e = map.epsilon;
    ((1.0 + e * q.ot) * c - q.ft) / (q.fx - e * q.ox * c)
}

/// `Xi^(k)(p, u)` for `k = 1..=n`, iterating along the forward orbit of `p`.
pub fn iterate_slope(map: &MapSpec, p: Point2, u0: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut q = p;
    let mut u = u0;
    for _ in 0..n {
        u = xi_unstable(map, q, u);
        out.push(u);
        q = map.apply(q);
    }
    out
}

/// One verified inequality `lhs < rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Condition {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            margin,
            pass: margin > 0.0 && margin.is_finite(),
        }
    }
}

/// Verdicts for every sufficient condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub r: u32,
    pub grid: usize,
    pub epsilon: f64,
    pub conditions: Vec<Condition>,
    /// Conditions (2)-(5), orientation and cone invariance. Condition (1) is a
    /// strict inequality that the plain doubling map meets with equality, so it
    /// is reported but not gated on.
    pub structural_pass: bool,
    pub all_pass: bool,
    pub cones: Option<ConeParams>,
    pub constants: Option<HyperbolicityConstants>,
}

impl HypothesisReport {
    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

struct Admissible {
    lower_u: f64,
    lower_c: f64,
    separate: f64,
}

fn admissible(n: &DerivativeNorms) -> Option<Admissible> {
    let phi = n.lambda.lo - n.theta_omega.hi - 1.0;
    let disc = phi * phi - 4.0 * n.theta_f.hi * n.x_omega.hi;
    if !(phi > 0.0) || disc < 0.0 || n.theta_omega.hi >= 1.0 {
        return None;
    }
    // roots of chi^2 |d_th f| - phi chi + |d_x w|, written to avoid 0/0
    let root = phi + disc.sqrt();
    Some(Admissible {
        lower_u: 2.0 * n.x_omega.hi / root,
        lower_c: 2.0 * n.theta_f.hi / root,
        separate: n.x_omega.hi / (1.0 - n.theta_omega.hi),
    })
}

fn first_failing_structural(n: &DerivativeNorms) -> &'static str {
    if n.x_omega.hi + n.theta_omega.hi >= 0.5 {
        "(2)"
    } else if 1.0 + n.theta_f.hi + n.theta_omega.hi + n.x_omega.hi >= n.lambda.lo {
        "(4)"
    } else {
        "(5)"
    }
}

/// Pattern search for a local maximum of a periodic function of two variables.
fn local_max(f: &dyn Fn(Point2) -> f64, start: Point2, step: f64) -> f64 {
    let mut p = start;
    let mut best = f(p);
    let mut h = step;
    while h > 1e-13 {
        let mut moved = false;
        for (dx, dt) in [
            (h, 0.0),
            (-h, 0.0),
            (0.0, h),
            (0.0, -h),
            (h, h),
            (-h, -h),
            (h, -h),
            (-h, h),
        ] {
            let q = Point2::new(p.x + dx, p.theta + dt).wrapped();
            let v = f(q);
            if v > best {
                best = v;
                p = q;
                moved = true;
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    best
}

/// Largest contraction ratio of the slope maps at the cone edges: a grid scan
/// followed by local maximisation from the best grid points of each edge map.
fn contraction_ratio(map: &MapSpec, chi_u: f64, chi_c: f64, grid: usize) -> f64 {
    let edges: [Box<dyn Fn(Point2) -> f64 + '_>; 4] = [
        Box::new(move |p| map.jacobian(p).push_slope(chi_u).abs() / chi_u),
        Box::new(move |p| map.jacobian(p).push_slope(-chi_u).abs() / chi_u),
        Box::new(move |p| xi_center(map, p, chi_c).abs() / chi_c),
        Box::new(move |p| xi_center(map, p, -chi_c).abs() / chi_c),
    ];
    let h = 1.0 / grid as f64;
    let mut worst: f64 = 0.0;
    for f in &edges {
        let mut vals: Vec<(f64, Point2)> = (0..grid * grid)
            .map(|k| {
                let p = Point2::new((k % grid) as f64 * h, (k / grid) as f64 * h);
                (f(p), p)
            })
            .collect();
        vals.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(v, p) in vals.iter().take(16) {
            worst = worst.max(v).max(local_max(f.as_ref(), p, h));
        }
    }
    worst
}

fn build_cones(
    map: &MapSpec,
    chi_u: f64,
    chi_c: f64,
    grid: usize,
    norms: &DerivativeNorms,
) -> ConeParams {
    let iota = contraction_ratio(map, chi_u, chi_c, grid);
    ConeParams {
        chi_u,
        chi_c,
        iota_star: iota,
        eps_cone: (0.1 * (1.0 - iota)).max(0.0),
        u_star: 2.0 * norms.omega_x_unscaled,
    }
}

/// Cone half-widths from the admissible intervals: `chi_u` is the midpoint of the
/// admissible range (also respecting the separation bound), `chi_c = 1`.
pub fn cone_parameters(
    map: &MapSpec,
    r: u32,
    grid: usize,
) -> Result<(ConeParams, HyperbolicityConstants)> {
    let norms = map.derivative_norms(grid);
    let adm = admissible(&norms).ok_or(SvphError::EmptyConeInterval {
        which: "chi_u",
        condition: first_failing_structural(&norms),
    })?;
    let lo_u = adm.lower_u.max(adm.separate);
    if lo_u >= 1.0 {
        return Err(SvphError::EmptyConeInterval {
            which: "chi_u",
            condition: first_failing_structural(&norms),
        });
    }
    if adm.lower_c >= 1.0 {
        return Err(SvphError::EmptyConeInterval {
            which: "chi_c",
            condition: "(5)",
        });
    }
    let cones = build_cones(map, 0.5 * (lo_u + 1.0), 1.0, grid, &norms);
    let consts = constants(map, &norms, &cones, r);
    Ok((cones, consts))
}

/// Fast-slow cones: `chi_u = eps u_star`, `chi_c = 1`.
pub fn fast_slow_cones(map: &MapSpec, grid: usize) -> Result<ConeParams> {
    let norms = map.derivative_norms(grid);
    let adm = admissible(&norms).ok_or(SvphError::EmptyConeInterval {
        which: "fast-slow chi_u",
        condition: first_failing_structural(&norms),
    })?;
    let chi_u = map.epsilon * 2.0 * norms.omega_x_unscaled;
    if !(chi_u > 0.0) || chi_u < adm.lower_u.max(adm.separate) || chi_u >= 1.0 {
        return Err(SvphError::EmptyConeInterval {
            which: "fast-slow chi_u",
            condition: "(4)",
        });
    }
    Ok(build_cones(map, chi_u, 1.0, grid, &norms))
}

/// Cones used by the transversality machinery: fast-slow cones when they are
/// admissible, otherwise the generic midpoint choice.
pub fn working_cones(map: &MapSpec, grid: usize) -> Result<ConeParams> {
    match fast_slow_cones(map, grid) {
        Ok(c) if c.invariant() => Ok(c),
        _ => cone_parameters(map, 5, grid).map(|(c, _)| c),
    }
}

fn constants(
    map: &MapSpec,
    norms: &DerivativeNorms,
    cones: &ConeParams,
    r: u32,
) -> HyperbolicityConstants {
    let a = cones.chi_u * norms.ratio_tf.hi;
    let b = norms.theta_omega.hi + cones.chi_c * norms.x_omega.hi;
    let lambda_minus = (1.0 - a) * norms.lambda.lo;
    let lambda_plus = (1.0 + a) * norms.big_lambda.hi;
    let mu = (1.0 / (1.0 - b)).max(b.exp());
    let alpha = (lambda_minus / (mu * mu)).ln() / lambda_plus.ln();
    let mut c = HyperbolicityConstants {
        lambda: norms.lambda.lo,
        big_lambda: norms.big_lambda.hi,
        a,
        b,
        lambda_minus,
        lambda_plus,
        mu_minus: 1.0 / (1.0 + b),
        mu_plus: 1.0 / (1.0 - b),
        mu,
        c_star: 1.0,
        r,
        zeta_r: zeta(r),
        alpha,
    };
    c.c_star = fit_c_star(map, cones, &c, 24, 6);
    c
}

/// Smallest `C` with `C^-1 l_-^n <= lambda^-_n`, `lambda^+_n <= C l_+^n` and the
/// analogous central bounds on a grid, padded by five percent.
fn fit_c_star(
    map: &MapSpec,
    cones: &ConeParams,
    c: &HyperbolicityConstants,
    grid: usize,
    n_max: usize,
) -> f64 {
    let mut worst: f64 = 1.0;
    for i in 0..grid {
        for j in 0..grid {
            let p = Point2::new(
                (i as f64 + 0.5) / grid as f64,
                (j as f64 + 0.5) / grid as f64,
            );
            let mut m = Mat2::IDENTITY;
            let mut q = p;
            for n in 1..=n_max {
                m = map.jacobian(q).mul(&m);
                q = map.apply(q);
                let e = rates_of(&m, cones.chi_c);
                let nf = n as i32;
                worst = worst
                    .max(c.lambda_minus.powi(nf) / e.lambda_minus)
                    .max(e.lambda_plus / c.lambda_plus.powi(nf))
                    .max(c.mu_minus.powi(nf) / e.mu_minus)
                    .max(e.mu_plus / c.mu_plus.powi(nf));
            }
        }
    }
    1.05 * worst
}

/// Extremal growth of `D_p F^n` off the central cone and of its inverse on the central cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRates {
    pub n: usize,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
}

fn rates_of(m: &Mat2, chi_c: f64) -> ExpansionRates {
    let off_center_half = FRAC_PI_2 - chi_c.atan();
    let (l_lo, l_hi) = m.stretch_range_on_arc(0.0, off_center_half);
    let inv = m
        .inverse()
        .unwrap_or(Mat2::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN));
    let (m_lo, m_hi) = inv.stretch_range_on_arc(FRAC_PI_2, chi_c.atan());
    ExpansionRates {
        n: 0,
        lambda_minus: l_lo,
        lambda_plus: l_hi,
        mu_minus: m_lo,
        mu_plus: m_hi,
    }
}

pub fn expansion_rates(map: &MapSpec, p: Point2, n: usize, cones: &ConeParams) -> ExpansionRates {
    let (_, m) = map.orbit_jacobian(p, n);
    ExpansionRates {
        n,
        ..rates_of(&m, cones.chi_c)
    }
}

/// Sufficient conditions for cone invariance and pinching.
pub fn check_hypotheses(map: &MapSpec, r: u32, grid: usize) -> HypothesisReport {
    let n = map.derivative_norms(grid);
    let h = 1.0 / grid as f64;
    let x_w = n.x_omega.hi;
    let t_w = n.theta_omega.hi;
    let t_f = n.theta_f.hi;
    let mut conds = Vec::new();

    // pointwise form of (1), widened by a Lipschitz slack
    let lip = map.f_pert.dx().lipschitz_bound() + map.f_pert.dt().lipschitz_bound();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..grid {
        for j in 0..grid {
            let q = map.partials(i as f64 * h, j as f64 * h);
            worst = worst.max((2.0 * (1.0 + x_w)).max(q.ft.abs()) - q.fx);
        }
    }
    conds.push(Condition::new("(1)", worst + 0.5 * h * lip, 0.0));
    conds.push(Condition::new("(2)", x_w + t_w, 0.5));
    conds.push(Condition::new(
        "(3)",
        t_w,
        (1.0 + n.x_omega.lo) / (n.lambda.hi - 1.0),
    ));
    conds.push(Condition::new("(4)", 1.0 + t_f + t_w + x_w, n.lambda.lo));
    let lam = n.lambda.lo;
    conds.push(Condition::new(
        "(5)",
        t_f,
        0.5 * (-1.0 + (1.0 + 2.0 * lam * lam / n.big_lambda.hi).sqrt()),
    ));
    let chi_c = 1.0;
    conds.push(Condition::new(
        "(6)",
        chi_c * x_w + t_w,
        lam.ln() / (4.0 * zeta(r)),
    ));
    conds.push(Condition::new("(H0)", 0.0, n.det_min));

    let params = cone_parameters(map, r, grid).ok();
    match &params {
        Some((cones, c)) => {
            conds.push(Condition::new(
                "(H4)",
                admissible(&n).map_or(f64::INFINITY, |a| a.lower_c),
                1.0,
            ));
            conds.push(Condition::new("cone invariance", cones.iota_star, 1.0));
            conds.push(Condition::new(
                "(H3)",
                c.zeta_r * c.mu.ln(),
                c.lambda_minus.ln(),
            ));
        }
        None => {
            conds.push(Condition::new("(H4)", f64::INFINITY, 1.0));
            conds.push(Condition::new("cone invariance", f64::INFINITY, 1.0));
            conds.push(Condition::new("(H3)", f64::INFINITY, 0.0));
        }
    }
    let structural = ["(2)", "(3)", "(4)", "(5)", "(H0)", "cone invariance"];
    let structural_pass = conds
        .iter()
        .filter(|c| structural.contains(&c.name.as_str()))
        .all(|c| c.pass);
    let all_pass = conds.iter().all(|c| c.pass);
    HypothesisReport {
        r,
        grid,
        epsilon: map.epsilon,
        conditions: conds,
        structural_pass,
        all_pass,
        cones: params.map(|p| p.0),
        constants: params.map(|p| p.1),
    }
}

/// An arc of the projective line, from angle `start` counter-clockwise over `len` (< pi).
#[derive(Debug, Clone, Copy)]
struct Arc {
    start: f64,
    len: f64,
}

impl Arc {
    fn centered(center: f64, half: f64) -> Self {
        Arc {
            start: (center - half).rem_euclid(PI),
            len: 2.0 * half,
        }
    }

    fn pull(&self, m: &Mat2) -> Arc {
        let a = m.apply([self.start.cos(), self.start.sin()]);
        let end = self.start + self.len;
        let b = m.apply([end.cos(), end.sin()]);
        let sa = a[1].atan2(a[0]).rem_euclid(PI);
        let sb = b[1].atan2(b[0]).rem_euclid(PI);
        let mut len = (sb - sa).rem_euclid(PI);
        if len == 0.0 && self.len > 0.0 {
            len = PI;
        }
        Arc { start: sa, len }
    }

    fn inside(&self, target: &Arc) -> bool {
        let off = (self.start - target.start).rem_euclid(PI);
        off + self.len <= target.len + 1e-15
    }
}

/// Depth after which backward images of directions outside the strict unstable
/// cone fall into the strict central cone. `worst` is over all inverse branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullbackDepth {
    pub best: usize,
    pub worst: usize,
}

pub fn m_chi_u(
    map: &MapSpec,
    p: Point2,
    cones: &ConeParams,
    max_depth: usize,
) -> Result<PullbackDepth> {
    let su = cones.chi_u_strict();
    let sc = cones.chi_c_strict();
    let start = Arc::centered(FRAC_PI_2, FRAC_PI_2 - su.atan());
    let target = Arc::centered(FRAC_PI_2, sc.atan());
    let mut best = usize::MAX;
    let mut worst = 0usize;
    // depth-first walk of the preimage tree, pruned once a branch has arrived
    let mut stack = vec![(p, start, 0usize)];
    while let Some((q, arc, depth)) = stack.pop() {
        if arc.inside(&target) {
            best = best.min(depth);
            worst = worst.max(depth);
            continue;
        }
        if depth == max_depth {
            return Err(SvphError::NotReached { max_depth });
        }
        for pre in inverse_branches(map, q)? {
            let inv = map
                .jacobian(pre.point)
                .inverse()
                .ok_or(SvphError::DegenerateJacobian {
                    x: pre.point.x,
                    theta: pre.point.theta,
                    det: 0.0,
                })?;
            stack.push((pre.point, arc.pull(&inv), depth + 1));
        }
    }
    Ok(PullbackDepth { best, worst })
}

/// Empirical constant in the distortion bound along a central curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionReport {
    pub n: usize,
    pub pairs: usize,
    /// `max |log(lambda^+_n(x) / lambda^+_n(y))| / (mu^n C_{mu,n} |x - y|)`
    pub constant: f64,
    pub max_log_ratio: f64,
}

/// Compares `lambda^+_n` at pairs of points of a central curve against
/// `exp(mu^n C_{mu,n} |x - y|)`, with `C_{mu,n} = min(n, 1/(mu - 1))`.
pub fn distortion_check(
    map: &MapSpec,
    curve: &CentralCurve,
    n: usize,
    cones: &ConeParams,
    mu: f64,
) -> Result<DistortionReport> {
    let m = curve.len();
    if m < 2 {
        return Err(SvphError::InvalidArgument(
            "curve needs at least two samples".into(),
        ));
    }
    let stride = (m / 64).max(1);
    let idx: Vec<usize> = (0..m).step_by(stride).collect();
    let rates: Vec<(Point2, f64)> = idx
        .iter()
        .map(|&i| {
            let p = curve.point(i);
            (p, expansion_rates(map, p, n, cones).lambda_plus)
        })
        .collect();
    let c_mu = if mu > 1.0 {
        (n as f64).min(1.0 / (mu - 1.0))
    } else {
        n as f64
    };
    let scale = mu.powi(n as i32) * c_mu.max(1e-300);
    let mut constant: f64 = 0.0;
    let mut max_log: f64 = 0.0;
    let mut pairs = 0;
    for a in 0..rates.len() {
        for b in (a + 1)..rates.len() {
            let d = crate::geometry::torus_distance(rates[a].0, rates[b].0);
            if d <= 0.0 {
                continue;
            }
            let lr = (rates[a].1 / rates[b].1).ln().abs();
            max_log = max_log.max(lr);
            constant = constant.max(lr / (scale * d));
            pairs += 1;
        }
    }
    Ok(DistortionReport {
        n,
        pairs,
        constant,
        max_log_ratio: max_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_values() {
        assert_eq!(zeta(5), 4320.0);
        assert_eq!(zeta(1), 12.0);
    }

    #[test]
    fn e0_slope_maps_halve() {
        let m = MapSpec::e0();
        let p = Point2::new(0.3, 0.8);
        assert!((xi_unstable(&m, p, 0.7) - 0.35).abs() < 1e-15);
        assert!((xi_center(&m, p, 0.7) - 0.35).abs() < 1e-15);
        assert_eq!(iterate_slope(&m, p, 1.0, 3), vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn e0_cone_parameters() {
        let (c, k) = cone_parameters(&MapSpec::e0(), 5, 64).unwrap();
        assert_eq!(c.chi_u, 0.5);
        assert_eq!(c.chi_c, 1.0);
        assert!((c.iota_star - 0.5).abs() < 1e-15);
        assert!((k.alpha - 1.0).abs() < 1e-15);
        assert_eq!(k.mu, 1.0);
        // growth off the central cone is sqrt(4^n + 1) / sqrt(2) at the cone edge
        assert!(k.c_star >= 1.0 && k.c_star < 1.05 * 2f64.sqrt() + 1e-12);
    }

    #[test]
    fn empty_interval_names_condition() {
        let err = cone_parameters(&MapSpec::e1(0.5), 5, 64).unwrap_err();
        assert!(
            matches!(
                err,
                SvphError::EmptyConeInterval {
                    condition: "(2)",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn central_slope_inverts_jacobian() {
        let m = MapSpec::e1(0.05);
        let p = Point2::new(0.37, 0.61);
        let c = 0.4;
        let back = m.jacobian(p).inverse().unwrap().apply([c, 1.0]);
        assert!((back[0] / back[1] - xi_center(&m, p, c)).abs() < 1e-13);
    }

    #[test]
    fn arc_pullback_orientation() {
        let a = Arc::centered(FRAC_PI_2, 0.3);
        let b = a.pull(&Mat2::new(0.5, 0.0, 0.0, 1.0));
        assert!(b.inside(&Arc::centered(FRAC_PI_2, 0.3)));
        assert!(!a.inside(&b));
    }
}
