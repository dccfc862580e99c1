//! Inverse branches of the map and backward images of central curves.

use crate::error::{Result, SvphError};
use crate::geometry::{wrap01, Mat2, Point2};
use crate::map::MapSpec;
use crate::spline::PeriodicSpline;
use serde::{Deserialize, Serialize};

/// Finite word over the alphabet `{0, .., d-1}`; the first backward step is the
/// most significant digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchWord {
    pub code: u64,
    pub len: u8,
}

impl BranchWord {
    pub const EMPTY: BranchWord = BranchWord { code: 0, len: 0 };

    pub fn push(self, digit: u32, base: u32) -> Self {
        Self {
            code: self.code * base as u64 + digit as u64,
            len: self.len + 1,
        }
    }

    pub fn digits(&self, base: u32) -> Vec<u32> {
        let mut out = vec![0; self.len as usize];
        let mut c = self.code;
        for slot in out.iter_mut().rev() {
            *slot = (c % base as u64) as u32;
            c /= base as u64;
        }
        out
    }

    pub fn from_digits(digits: &[u32], base: u32) -> Self {
        digits.iter().fold(Self::EMPTY, |w, &d| w.push(d, base))
    }
}

/// A point of `F^{-n}(p)` with the derivative `D F^n` at that point.
#[derive(Debug, Clone, Copy)]
pub struct Preimage {
    pub point: Point2,
    pub word: BranchWord,
    pub jac: Mat2,
}

/// A single backward step.
#[derive(Debug, Clone, Copy)]
pub struct Branch1 {
    pub point: Point2,
    pub digit: u32,
}

/// Newton solve of `F_lift(x, theta) = target` on the universal cover.
fn newton_lift(
    map: &MapSpec,
    target: (f64, f64),
    seed: (f64, f64),
    digit: u32,
) -> Result<(f64, f64)> {
    let (mut x, mut t) = seed;
    let resid = |x: f64, t: f64| {
        let (a, b) = map.lift(x, t);
        (a - target.0, b - target.1)
    };
    let (mut rx, mut rt) = resid(x, t);
    let mut r = rx.abs().max(rt.abs());
    for _ in 0..80 {
        if r <= 4e-16 * (1.0 + target.0.abs()) {
            return Ok((x, t));
        }
        let j = map.jacobian(Point2::new(x, t));
        let inv = j.inverse().ok_or(SvphError::DegenerateJacobian {
            x,
            theta: t,
            det: j.det(),
        })?;
        let d = inv.apply([rx, rt]);
        let mut step = 1.0;
        loop {
            let (nx, nt) = (x - step * d[0], t - step * d[1]);
            let (ax, at) = resid(nx, nt);
            let nr = ax.abs().max(at.abs());
            if nr < r || step < 1e-6 {
                let moved = (nx - x).abs().max((nt - t).abs());
                x = nx;
                t = nt;
                rx = ax;
                rt = at;
                r = nr;
                if moved <= 1e-16 * (1.0 + x.abs()) {
                    return Ok((x, t));
                }
                break;
            }
            step *= 0.5;
        }
    }
    if r <= 1e-12 {
        return Ok((x, t));
    }
    Err(SvphError::NewtonDivergence {
        branch: vec![digit],
        residual: r,
    })
}

fn solve_branch(map: &MapSpec, p: Point2, k: u32) -> Result<Point2> {
    let d = map.degree as f64;
    let tx = p.x + k as f64;
    let x0 = (tx - map.f_pert.value(tx / d, p.theta)) / d;
    let t0 = p.theta - map.epsilon * map.omega.value(x0, p.theta);
    let (x, t) = newton_lift(map, (tx, p.theta), (x0, t0), k)?;
    Ok(Point2::new(wrap01(x), wrap01(t)))
}

/// The `d` points of `F^{-1}(p)`, labelled by the integer offset of their lift.
pub fn inverse_branches(map: &MapSpec, p: Point2) -> Result<Vec<Branch1>> {
    (0..map.degree)
        .map(|k| {
            Ok(Branch1 {
                point: solve_branch(map, p, k)?,
                digit: k,
            })
        })
        .collect()
}

/// All `d^n` points of `F^{-n}(p)` with their branch words and `D F^n`.
pub fn preimages(map: &MapSpec, p: Point2, n: usize) -> Result<Vec<Preimage>> {
    let d = map.degree;
    if (d as f64).powi(n as i32) > 2e8 {
        return Err(SvphError::DepthTooLarge { depth: n, max: 0 });
    }
    let mut level = vec![Preimage {
        point: p,
        word: BranchWord::EMPTY,
        jac: Mat2::IDENTITY,
    }];
    for _ in 0..n {
        let mut next = Vec::with_capacity(level.len() * d as usize);
        for node in &level {
            for k in 0..d {
                let q = solve_branch(map, node.point, k).map_err(|e| match e {
                    SvphError::NewtonDivergence { residual, .. } => {
                        let mut b = node.word.digits(d);
                        b.push(k);
                        SvphError::NewtonDivergence {
                            branch: b,
                            residual,
                        }
                    }
                    other => other,
                })?;
                next.push(Preimage {
                    point: q,
                    word: node.word.push(k, d),
                    jac: node.jac.mul(&map.jacobian(q)),
                });
            }
        }
        level = next;
    }
    Ok(level)
}

/// Follow a single branch word backwards from `p`.
pub fn preimage_along(map: &MapSpec, p: Point2, word: &[u32]) -> Result<Preimage> {
    let mut node = Preimage {
        point: p,
        word: BranchWord::EMPTY,
        jac: Mat2::IDENTITY,
    };
    for &k in word {
        if k >= map.degree {
            return Err(SvphError::InvalidArgument(format!(
                "branch digit {k} >= degree {}",
                map.degree
            )));
        }
        let q = solve_branch(map, node.point, k)?;
        node = Preimage {
            point: q,
            word: node.word.push(k, map.degree),
            jac: node.jac.mul(&map.jacobian(q)),
        };
    }
    Ok(node)
}

/// A closed curve `s -> (x(s), s)` on the torus, sampled at `s = i / m`, with `x` lifted continuously.
#[derive(Debug, Clone)]
pub struct CentralCurve {
    x: Vec<f64>,
    winding: i64,
    spline: PeriodicSpline,
}

impl CentralCurve {
    /// Samples `x_i` of the lifted first coordinate with `x(1) = x(0) + winding`.
    pub fn from_samples(x: Vec<f64>, winding: i64) -> Result<Self> {
        if x.len() < 8 {
            return Err(SvphError::InvalidArgument(
                "a curve needs at least 8 samples".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SvphError::InvalidArgument("non-finite curve sample".into()));
        }
        let m = x.len();
        let periodic: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v - winding as f64 * i as f64 / m as f64)
            .collect();
        Ok(Self {
            spline: PeriodicSpline::new(periodic),
            x,
            winding,
        })
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let winding = (f(1.0) - f(0.0)).round() as i64;
        Self::from_samples((0..m).map(|i| f(i as f64 / m as f64)).collect(), winding)
    }

    pub fn vertical(x0: f64, m: usize) -> Result<Self> {
        Self::from_fn(m, |_| x0)
    }

    /// Parse `vertical:X` or `sine:X,AMP`.
    pub fn parse(spec: &str, m: usize) -> Result<Self> {
        let bad = || SvphError::InvalidArgument(format!("unrecognised curve '{spec}'"));
        let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, nums.as_slice()) {
            ("vertical", [x0]) => Self::vertical(*x0, m),
            ("sine", [x0, amp]) => {
                let (x0, amp) = (*x0, *amp);
                Self::from_fn(m, move |t| x0 + amp * (std::f64::consts::TAU * t).sin())
            }
            _ => Err(bad()),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn winding(&self) -> i64 {
        self.winding
    }

    pub fn samples(&self) -> &[f64] {
        &self.x
    }

    pub fn point(&self, i: usize) -> Point2 {
        Point2::new(wrap01(self.x[i]), i as f64 / self.x.len() as f64)
    }

    /// Lifted `x(s)` and its first three derivatives, for `s` in `[0, 1)` or beyond.
    pub fn jet(&self, s: f64) -> [f64; 4] {
        let shift = s.floor();
        let [v, d1, d2, d3] = self.spline.eval(s - shift);
        let w = self.winding as f64;
        [v + w * s, d1 + w, d2, d3]
    }

    /// Rows `(t, x, x', x'')` at the sample points.
    pub fn table(&self) -> Vec<[f64; 4]> {
        let m = self.x.len();
        (0..m)
            .map(|i| {
                let t = i as f64 / m as f64;
                let [v, d1, d2, _] = self.jet(t);
                [t, v, d1, d2]
            })
            .collect()
    }
}

/// Backward image of a central curve along one branch word.
#[derive(Debug, Clone)]
pub struct PulledCurve {
    pub word: Vec<u32>,
    pub n: usize,
    pub curve: CentralCurve,
    /// `h_n(s_j)`: the parameter of the original curve hit by `F^n(curve(s_j))`, lifted.
    pub h: Vec<f64>,
    pub max_residual: f64,
}

/// `F^n` on the universal cover together with its derivative.
fn lift_iterate(map: &MapSpec, x: f64, t: f64, n: usize) -> ((f64, f64), Mat2) {
    let mut m = Mat2::IDENTITY;
    let (mut a, mut b) = (x, t);
    for _ in 0..n {
        m = map.jacobian(Point2::new(a, b)).mul(&m);
        let (na, nb) = map.lift(a, b);
        a = na;
        b = nb;
    }
    ((a, b), m)
}

/// Pull a central curve back along a branch word and reparametrise it by height.
pub fn pull_back_curve(map: &MapSpec, gamma: &CentralCurve, word: &[u32]) -> Result<PulledCurve> {
    let n = word.len();
    let m = gamma.len();
    let g = |t: f64| gamma.jet(t);
    let p0 = Point2::new(wrap01(g(0.0)[0]), 0.0);
    let start = preimage_along(map, p0, word)?;
    let (img, _) = lift_iterate(map, start.point.x, start.point.theta, n);
    let off_x = (img.0 - g(0.0)[0]).round();
    let off_t = img.1.round();
    let target = |t: f64| (g(t)[0] + off_x, t + off_t);

    // continuation along the curve on the cover
    let dense = 4 * m;
    let mut traced = Vec::with_capacity(dense + 1);
    let (mut qx, mut qt) = (start.point.x, start.point.theta);
    for i in 0..=dense {
        let t = i as f64 / dense as f64;
        let tg = target(t);
        for _ in 0..60 {
            let ((a, b), jac) = lift_iterate(map, qx, qt, n);
            let (rx, rt) = (a - tg.0, b - tg.1);
            if rx.abs().max(rt.abs()) < 1e-13 {
                break;
            }
            let inv = jac.inverse().ok_or(SvphError::DegenerateJacobian {
                x: qx,
                theta: qt,
                det: jac.det(),
            })?;
            let d = inv.apply([rx, rt]);
            qx -= d[0];
            qt -= d[1];
        }
        traced.push((t, qx, qt));
    }
    let th0 = traced[0].2;
    if traced.windows(2).any(|w| w[1].2 <= w[0].2) {
        return Err(SvphError::InvalidArgument(
            "pulled-back curve is not a graph over theta".into(),
        ));
    }
    let winding = (traced[dense].1 - traced[0].1).round() as i64;

    let mut xs = vec![0.0; m];
    let mut hs = vec![0.0; m];
    let mut max_res: f64 = 0.0;
    for (j, (xj, hj)) in xs.iter_mut().zip(hs.iter_mut()).enumerate() {
        let sj = j as f64 / m as f64;
        let lift_k = (th0 - sj).ceil();
        let s = sj + lift_k;
        let idx = traced.partition_point(|v| v.2 <= s).clamp(1, dense);
        let (t0, x0, a0) = traced[idx - 1];
        let (t1, x1, a1) = traced[idx];
        let w = (s - a0) / (a1 - a0);
        let (mut x, mut t) = (x0 + w * (x1 - x0), t0 + w * (t1 - t0));
        let mut res = f64::INFINITY;
        for _ in 0..60 {
            let ((a, b), jac) = lift_iterate(map, x, s, n);
            let gj = g(t);
            let (rx, rt) = (a - gj[0] - off_x, b - t - off_t);
            res = rx.abs().max(rt.abs());
            if res < 1e-13 {
                break;
            }
            // unknowns (x, t): d/dx = first column of DF^n, d/dt = -(x_gamma', 1)
            let sys = Mat2::new(jac.m[0][0], -gj[1], jac.m[1][0], -1.0);
            let inv = sys
                .inverse()
                .ok_or(SvphError::SolverStall("singular curve polish".into()))?;
            let d = inv.apply([rx, rt]);
            x -= d[0];
            t -= d[1];
        }
        max_res = max_res.max(res);
        *xj = x - lift_k * winding as f64;
        *hj = t - lift_k;
    }
    let shift = xs[0].floor();
    xs.iter_mut().for_each(|v| *v -= shift);
    Ok(PulledCurve {
        word: word.to_vec(),
        n,
        curve: CentralCurve::from_samples(xs, winding)?,
        h: hs,
        max_residual: max_res,
    })
}

/// Pull back along every word of length `n`.
pub fn pull_back_all(map: &MapSpec, gamma: &CentralCurve, n: usize) -> Result<Vec<PulledCurve>> {
    let d = map.degree;
    let count = (d as u64).pow(n as u32);
    (0..count)
        .map(|c| {
            pull_back_curve(
                map,
                gamma,
                &BranchWord {
                    code: c,
                    len: n as u8,
                }
                .digits(d),
            )
        })
        .collect()
}

/// Membership test for the admissible class of central curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveClassReport {
    pub closed: bool,
    pub homotopy_ok: bool,
    pub slope_max: f64,
    pub slope_ok: bool,
    /// `sup |x^(l)|` for `l = 2..=j`
    pub derivative_max: Vec<f64>,
    /// `c^{(l-1)!}` for `l = 2..=j`
    pub derivative_bound: Vec<f64>,
    pub pass: bool,
}

pub fn curve_class_check(curve: &CentralCurve, c: f64, j: usize, chi_c: f64) -> CurveClassReport {
    let m = curve.len();
    let xs = curve.samples();
    let step_max = xs
        .windows(2)
        .fold(0.0f64, |a, w| a.max((w[1] - w[0]).abs()));
    let closing = (xs[0] + curve.winding() as f64 - xs[m - 1]).abs();
    let closed = closing <= 10.0 * step_max + 1e-12;
    let homotopy_ok = curve.winding() == 0;
    let mut maxima = [0.0f64; 4];
    for i in 0..m {
        let jet = curve.jet(i as f64 / m as f64);
        let mid = curve.jet((i as f64 + 0.5) / m as f64);
        for l in 1..4 {
            maxima[l] = maxima[l].max(jet[l].abs()).max(mid[l].abs());
        }
    }
    let mut dmax = Vec::new();
    let mut dbound = Vec::new();
    for l in 2..=j.min(3) {
        dmax.push(maxima[l]);
        let fact: u64 = (1..l as u64).product();
        dbound.push(c.powi(fact as i32));
    }
    let slope_ok = maxima[1] <= chi_c;
    let pass = closed && homotopy_ok && slope_ok && dmax.iter().zip(&dbound).all(|(a, b)| a <= b);
    CurveClassReport {
        closed,
        homotopy_ok,
        slope_max: maxima[1],
        slope_ok,
        derivative_max: dmax,
        derivative_bound: dbound,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::torus_distance;

    #[test]
    fn word_roundtrip() {
        let w = BranchWord::from_digits(&[2, 0, 1, 1], 3);
        assert_eq!(w.digits(3), vec![2, 0, 1, 1]);
        assert_eq!(w.len, 4);
    }

    #[test]
    fn e0_preimages_are_halves() {
        let m = MapSpec::e0();
        let pre = inverse_branches(&m, Point2::new(0.3, 0.4)).unwrap();
        assert!((pre[0].point.x - 0.15).abs() < 1e-15 && (pre[1].point.x - 0.65).abs() < 1e-15);
        assert!(pre.iter().all(|b| (b.point.theta - 0.4).abs() < 1e-15));
    }

    #[test]
    fn preimages_map_forward_and_are_distinct() {
        let m = MapSpec::e1(0.05);
        let p = Point2::new(0.71, 0.23);
        let pre = preimages(&m, p, 4).unwrap();
        assert_eq!(pre.len(), 81);
        for q in &pre {
            assert!(torus_distance(m.iterate(q.point, 4), p) < 1e-12);
            let (_, jac) = m.orbit_jacobian(q.point, 4);
            assert!((jac.det() - q.jac.det()).abs() < 1e-9 * jac.det());
        }
        for a in 0..pre.len() {
            for b in (a + 1)..pre.len() {
                assert!(torus_distance(pre[a].point, pre[b].point) > 1e-6);
            }
        }
    }

    #[test]
    fn bad_digit_is_rejected() {
        assert!(preimage_along(&MapSpec::e0(), Point2::new(0.1, 0.1), &[0, 2]).is_err());
    }

    #[test]
    fn e0_vertical_line_pulls_back_to_vertical_lines() {
        let m = MapSpec::e0();
        let g = CentralCurve::vertical(0.3, 128).unwrap();
        let curves = pull_back_all(&m, &g, 1).unwrap();
        let mut xs: Vec<f64> = curves.iter().map(|c| c.curve.samples()[17]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.15).abs() < 1e-12 && (xs[1] - 0.65).abs() < 1e-12);
        for c in &curves {
            for (j, h) in c.h.iter().enumerate() {
                assert!((h - j as f64 / 128.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curve_parse_errors() {
        assert!(CentralCurve::parse("vertical:abc", 64).is_err());
        assert!(CentralCurve::parse("spiral:1", 64).is_err());
        assert!(CentralCurve::parse("sine:0.2,0.01", 64).is_ok());
    }
}
