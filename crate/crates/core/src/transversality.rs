//! Transversality of image cones and the counting functions built from it.

use crate::branches::{preimages, BranchWord, Preimage};
use crate::cones::{m_chi_u, zeta, ConeParams, HyperbolicityConstants};
use crate::error::{Result, SvphError};
use crate::geometry::{torus_distance, Point2, ProjectiveLine, SlopeInterval};
use crate::map::MapSpec;
use crate::transfer::{grid_points, FiberDensity};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Image of the strict unstable cone at a preimage, with its weight `1 / |det D F^n|`.
#[derive(Debug, Clone, Copy)]
pub struct ConeImage {
    pub point: Point2,
    pub word: BranchWord,
    pub weight: f64,
    pub cone: SlopeInterval,
}

fn image_of(pre: &Preimage, chi: f64) -> Result<ConeImage> {
    let j = &pre.jac;
    if j.m[0][0] - chi * j.m[0][1].abs() <= 0.0 {
        return Err(SvphError::ViolatedBound(
            "unstable cone is not mapped into a graph over x".into(),
        ));
    }
    Ok(ConeImage {
        point: pre.point,
        word: pre.word,
        weight: 1.0 / j.det().abs(),
        cone: SlopeInterval::symmetric(chi).push(j),
    })
}

/// Cone images for all points of `F^{-n}(y)`.
pub fn cone_images(
    map: &MapSpec,
    cones: &ConeParams,
    y: Point2,
    n: usize,
) -> Result<Vec<ConeImage>> {
    let chi = cones.chi_u_strict();
    preimages(map, y, n)?
        .iter()
        .map(|p| image_of(p, chi))
        .collect()
}

/// `z1` and `z2` are transversal when their image cones under `D F^n` are disjoint.
pub fn is_transversal(
    map: &MapSpec,
    cones: &ConeParams,
    z1: Point2,
    z2: Point2,
    n: usize,
) -> Result<bool> {
    let (y1, j1) = map.orbit_jacobian(z1, n);
    let (y2, j2) = map.orbit_jacobian(z2, n);
    let distance = torus_distance(y1, y2);
    if distance > 1e-9 {
        return Err(SvphError::NotSameFiber { n, distance });
    }
    let chi = cones.chi_u_strict();
    let a = image_of(
        &Preimage {
            point: z1,
            word: BranchWord::EMPTY,
            jac: j1,
        },
        chi,
    )?;
    let b = image_of(
        &Preimage {
            point: z2,
            word: BranchWord::EMPTY,
            jac: j2,
        },
        chi,
    )?;
    Ok(!a.cone.intersects(&b.cone))
}

/// Weighted overlap counts: for each image, the total weight of images meeting it.
struct Sweep {
    los: Vec<f64>,
    his: Vec<f64>,
    lo_cum: Vec<f64>,
    hi_cum: Vec<f64>,
    total: f64,
}

impl Sweep {
    fn new(imgs: &[ConeImage], weight: impl Fn(&ConeImage) -> f64) -> Self {
        let mut lo: Vec<(f64, f64)> = imgs.iter().map(|c| (c.cone.lo, weight(c))).collect();
        let mut hi: Vec<(f64, f64)> = imgs.iter().map(|c| (c.cone.hi, weight(c))).collect();
        lo.sort_by(|a, b| a.0.total_cmp(&b.0));
        hi.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cum = |v: &[(f64, f64)]| {
            let mut out = Vec::with_capacity(v.len() + 1);
            out.push(0.0);
            let mut s = 0.0;
            for e in v {
                s += e.1;
                out.push(s);
            }
            out
        };
        let total = lo.iter().map(|e| e.1).sum();
        Self {
            lo_cum: cum(&lo),
            hi_cum: cum(&hi),
            los: lo.into_iter().map(|e| e.0).collect(),
            his: hi.into_iter().map(|e| e.0).collect(),
            total,
        }
    }

    /// Weight of the cones containing slope `s`.
    fn containing(&self, s: f64) -> f64 {
        let started = self.los.partition_point(|&a| a <= s);
        let ended = self.his.partition_point(|&b| b < s);
        self.lo_cum[started] - self.hi_cum[ended]
    }

    /// Weight of the cones meeting `[a, b]`.
    fn meeting(&self, a: f64, b: f64) -> f64 {
        let before = self.his.partition_point(|&h| h < a);
        let after = self.los.len() - self.los.partition_point(|&l| l <= b);
        let after_w = self.total - self.lo_cum[self.los.len() - after];
        self.total - self.hi_cum[before] - after_w
    }

    /// Maximal weight over all lines, attained at a left endpoint of some cone.
    fn max_containing(&self) -> (f64, f64) {
        let mut best = (0.0, 0.0);
        for &a in &self.los {
            let v = self.containing(a);
            if v > best.0 {
                best = (v, a);
            }
        }
        best
    }
}

/// `N(n, y)` with the maximising `z1` and, when one exists, a transversal pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NCount {
    pub value: f64,
    pub l_n_1: f64,
    pub argmax: Vec<u32>,
    pub transversal_pair: Option<(Vec<u32>, Vec<u32>)>,
}

fn transversal_pair(imgs: &[ConeImage]) -> Option<(usize, usize)> {
    let (imin, _) = imgs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cone.hi.total_cmp(&b.1.cone.hi))?;
    let (imax, _) = imgs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cone.lo.total_cmp(&b.1.cone.lo))?;
    (imgs[imin].cone.hi < imgs[imax].cone.lo).then_some((imin, imax))
}

pub fn n_count_from(imgs: &[ConeImage], base: u32) -> NCount {
    let sweep = Sweep::new(imgs, |c| c.weight);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, c) in imgs.iter().enumerate() {
        let v = sweep.meeting(c.cone.lo, c.cone.hi);
        if v > best.0 {
            best = (v, i);
        }
    }
    NCount {
        value: best.0.max(0.0),
        l_n_1: sweep.total,
        argmax: imgs
            .get(best.1)
            .map(|c| c.word.digits(base))
            .unwrap_or_default(),
        transversal_pair: transversal_pair(imgs)
            .map(|(a, b)| (imgs[a].word.digits(base), imgs[b].word.digits(base))),
    }
}

/// `N(n, y) = max over z1 of the weight of the preimages not transversal to z1`.
pub fn n_count(map: &MapSpec, cones: &ConeParams, y: Point2, n: usize) -> Result<NCount> {
    Ok(n_count_from(&cone_images(map, cones, y, n)?, map.degree))
}

/// `N~(n, y, L)`: weight of the preimages whose image cone contains `L`.
pub fn n_tilde(
    map: &MapSpec,
    cones: &ConeParams,
    y: Point2,
    line: ProjectiveLine,
    n: usize,
) -> Result<f64> {
    let s = line.slope();
    Ok(cone_images(map, cones, y, n)?
        .iter()
        .filter(|c| c.cone.contains(s))
        .map(|c| c.weight)
        .sum())
}

/// `sup over L of N~(n, y, L)` and a maximising line.
pub fn n_tilde_sup(
    map: &MapSpec,
    cones: &ConeParams,
    y: Point2,
    n: usize,
) -> Result<(f64, ProjectiveLine)> {
    let imgs = cone_images(map, cones, y, n)?;
    let (v, s) = Sweep::new(&imgs, |c| c.weight).max_containing();
    Ok((v, ProjectiveLine::from_slope(s)))
}

fn par_max(points: &[Point2], f: impl Fn(Point2) -> Result<f64> + Sync) -> Result<f64> {
    let vals: Result<Vec<f64>> = points.par_iter().map(|&p| f(p)).collect();
    Ok(vals?.into_iter().fold(0.0, f64::max))
}

/// `sup over y in points of N(n, y)`.
pub fn sup_n_count(map: &MapSpec, cones: &ConeParams, points: &[Point2], n: usize) -> Result<f64> {
    par_max(points, |y| Ok(n_count(map, cones, y, n)?.value))
}

/// `sup over y in points, L of N~(n, y, L)`.
pub fn sup_n_tilde(map: &MapSpec, cones: &ConeParams, points: &[Point2], n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    par_max(points, |y| Ok(n_tilde_sup(map, cones, y, n)?.0))
}

/// Union of the points with all their `n`-th preimages.
pub fn with_preimages(map: &MapSpec, points: &[Point2], n: usize) -> Result<Vec<Point2>> {
    let mut out = points.to_vec();
    for &p in points {
        out.extend(preimages(map, p, n)?.iter().map(|q| q.point));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmultiplicativityReport {
    pub n: usize,
    pub m: usize,
    pub n_tilde_n: f64,
    pub n_tilde_m: f64,
    pub n_tilde_nm: f64,
    /// `max over sampled (y, L) of N~(n+m, y, L) / (N~(n) N~(m))`
    pub worst_ratio: f64,
}

/// `N~(n+m) <= N~(n) N~(m)`. The sup defining `N~(m)` runs over the sample grid
/// together with its `n`-th preimages, the points where the `m`-step factor is evaluated.
pub fn check_submultiplicativity(
    map: &MapSpec,
    cones: &ConeParams,
    n: usize,
    m: usize,
    grid: usize,
) -> Result<SubmultiplicativityReport> {
    let pts = grid_points(grid);
    let nt_nm = sup_n_tilde(map, cones, &pts, n + m)?;
    let nt_n = sup_n_tilde(map, cones, &pts, n)?;
    let nt_m = sup_n_tilde(map, cones, &with_preimages(map, &pts, n)?, m)?;
    Ok(SubmultiplicativityReport {
        n,
        m,
        n_tilde_n: nt_n,
        n_tilde_m: nt_m,
        n_tilde_nm: nt_nm,
        worst_ratio: nt_nm / (nt_n * nt_m),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationReport {
    pub n: usize,
    pub m0: usize,
    pub alpha: f64,
    pub n_count: f64,
    pub l_sup: f64,
    pub n_tilde_m0: f64,
    /// `N(n)^{1/n}`
    pub lhs: f64,
    /// `||L^{n-m0} 1||^{1/n} (N~(m0)^{1/m0})^alpha`
    pub rhs: f64,
    pub slack: f64,
    /// `||L^{n-m0} 1|| N~(m0) - N(n)`
    pub linear_slack: f64,
}

/// Evaluates both sides of `N(n)^{1/n} <= ||L^{n-m0} 1||^{1/n} (N~(m0)^{1/m0})^alpha`, `m0 = ceil(alpha n)`.
pub fn relation_check(
    map: &MapSpec,
    cones: &ConeParams,
    alpha: f64,
    n: usize,
    grid: usize,
) -> Result<RelationReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SvphError::InvalidArgument(format!(
            "alpha = {alpha} must lie in (0, 1]"
        )));
    }
    let m0 = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    let pts = grid_points(grid);
    let n_count = sup_n_count(map, cones, &pts, n)?;
    let nt = sup_n_tilde(map, cones, &pts, m0)?;
    let l_sup = crate::transfer::sup_l_n_1(map, &with_preimages(map, &pts, m0)?, n - m0)?;
    let lhs = n_count.powf(1.0 / n as f64);
    let rhs = l_sup.powf(1.0 / n as f64) * nt.powf(alpha / m0 as f64);
    Ok(RelationReport {
        n,
        m0,
        alpha,
        n_count,
        l_sup,
        n_tilde_m0: nt,
        lhs,
        rhs,
        slack: rhs - lhs,
        linear_slack: l_sup * nt - n_count,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct N0Report {
    pub n0: usize,
    pub grid: usize,
    /// A transversal pair of branch words for each sample point.
    pub witnesses: Vec<(Point2, Vec<u32>, Vec<u32>)>,
}

/// Smallest `n <= n_max` such that every sample point has a transversal preimage pair.
pub fn n0_estimate(
    map: &MapSpec,
    cones: &ConeParams,
    n_max: usize,
    grid: usize,
) -> Result<N0Report> {
    let pts = grid_points(grid);
    'depth: for n in 1..=n_max {
        let mut witnesses = Vec::with_capacity(pts.len());
        for &p in &pts {
            let imgs = cone_images(map, cones, p, n)?;
            match transversal_pair(&imgs) {
                Some((a, b)) => witnesses.push((
                    p,
                    imgs[a].word.digits(map.degree),
                    imgs[b].word.digits(map.degree),
                )),
                None => continue 'depth,
            }
        }
        return Ok(N0Report {
            n0: n,
            grid,
            witnesses,
        });
    }
    Err(SvphError::NotReached { max_depth: n_max })
}

/// `frak N(p, v, n) = (1 / h_*(p)) sum over cone-containing z = (y, eta) of h_*(y, theta_p) / |det D F^n(z)|`.
pub fn frak_n(
    map: &MapSpec,
    cones: &ConeParams,
    fiber: &FiberDensity,
    p: Point2,
    v: ProjectiveLine,
    n: usize,
) -> Result<f64> {
    let s = v.slope();
    let hp = fiber.eval(p.x, p.theta);
    Ok(cone_images(map, cones, p, n)?
        .iter()
        .filter(|c| c.cone.contains(s))
        .map(|c| fiber.eval(c.point.x, p.theta) * c.weight)
        .sum::<f64>()
        / hp)
}

/// `sup over v of frak N(p, v, n)`.
pub fn frak_n_sup(
    map: &MapSpec,
    cones: &ConeParams,
    fiber: &FiberDensity,
    p: Point2,
    n: usize,
) -> Result<f64> {
    let imgs = cone_images(map, cones, p, n)?;
    let hp = fiber.eval(p.x, p.theta);
    let (v, _) = Sweep::new(&imgs, |c| fiber.eval(c.point.x, p.theta) * c.weight).max_containing();
    Ok(v / hp)
}

/// `sup over the grid of sup over v of frak N(p, v, n)`.
pub fn frak_n_grid(
    map: &MapSpec,
    cones: &ConeParams,
    fiber: &FiberDensity,
    grid: usize,
    n: usize,
) -> Result<f64> {
    par_max(&grid_points(grid), |p| frak_n_sup(map, cones, fiber, p, n))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainAssumptionReport {
    pub s: u32,
    pub n1: usize,
    pub sigma: f64,
    pub m_bar: f64,
    pub depth: usize,
    pub n_tilde: f64,
    /// `log(mu^{zeta_s} / lambda_-)`
    pub log_term_pinching: f64,
    /// `log sqrt(N~(ceil(alpha n1)) mu^{alpha_s n1 + beta_s m_bar})`
    pub log_term_transversal: f64,
    /// The larger of the two terms; any `nu_0` in `(value, 1)` is admissible.
    pub value: f64,
    pub binding: String,
    pub holds: bool,
    pub note: String,
}

/// Evaluate the quantitative transversality assumption for the given `s` and `n1`.
pub fn main_assumption_check(
    map: &MapSpec,
    cones: &ConeParams,
    consts: &HyperbolicityConstants,
    s: u32,
    n1: usize,
    sigma: f64,
    grid: usize,
) -> Result<MainAssumptionReport> {
    if s < 1 || s + 3 > consts.r {
        return Err(SvphError::InvalidArgument(format!(
            "s = {s} must satisfy 1 <= s <= r - 3 = {}",
            consts.r as i64 - 3
        )));
    }
    let alpha = consts.alpha;
    let pts = grid_points(grid);
    let mut worst_m = 0usize;
    for &p in &pts {
        worst_m = worst_m.max(m_chi_u(map, p, cones, 14)?.worst);
    }
    let m_bar = sigma * worst_m as f64;
    let ln_mu = consts.mu.ln();
    let log_pin = zeta(s) * ln_mu - consts.lambda_minus.ln();
    if !(alpha > 0.0) {
        return Ok(MainAssumptionReport {
            s,
            n1,
            sigma,
            m_bar,
            depth: 0,
            n_tilde: f64::NAN,
            log_term_pinching: log_pin,
            log_term_transversal: f64::INFINITY,
            value: f64::INFINITY,
            binding: "alpha".into(),
            holds: false,
            note: format!("alpha = {alpha:.4} is not positive; the assumption cannot hold"),
        });
    }
    let depth = (alpha * n1 as f64).ceil() as usize;
    if depth > 12 {
        return Err(SvphError::DepthTooLarge { depth, max: 12 });
    }
    let nt = sup_n_tilde(map, cones, &pts, depth)?;
    let alpha_s = 2.0 * (2.0 + s as f64 - alpha);
    let beta_s = 2.0 * (s as f64 + 2.0);
    let log_tr = 0.5 * (nt.ln() + (alpha_s * n1 as f64 + beta_s * m_bar) * ln_mu);
    let (value_log, binding) = if log_pin >= log_tr {
        (log_pin, "pinching")
    } else {
        (log_tr, "transversality")
    };
    let value = value_log.exp();
    Ok(MainAssumptionReport {
        s,
        n1,
        sigma,
        m_bar,
        depth,
        n_tilde: nt,
        log_term_pinching: log_pin,
        log_term_transversal: log_tr,
        value,
        binding: binding.into(),
        holds: value < 1.0,
        note: "the sampled sup over the torus cannot certify the assumption; it is evidence only"
            .into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::cone_parameters;

    fn e0_cones() -> ConeParams {
        cone_parameters(&MapSpec::e0(), 5, 32).unwrap().0
    }

    #[test]
    fn e0_counts_are_one() {
        let m = MapSpec::e0();
        let c = e0_cones();
        for n in 1..=6 {
            let y = Point2::new(0.31, 0.77);
            let nc = n_count(&m, &c, y, n).unwrap();
            assert!((nc.value - 1.0).abs() < 1e-12);
            assert!(nc.transversal_pair.is_none());
            assert!((n_tilde_sup(&m, &c, y, n).unwrap().0 - 1.0).abs() < 1e-12);
            assert!(
                (n_tilde(&m, &c, y, ProjectiveLine::horizontal(), n).unwrap() - 1.0).abs() < 1e-12
            );
            assert_eq!(
                n_tilde(&m, &c, y, ProjectiveLine::from_slope(1.0), n).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn not_same_fiber_is_an_error() {
        let m = MapSpec::e0();
        let r = is_transversal(
            &m,
            &e0_cones(),
            Point2::new(0.1, 0.1),
            Point2::new(0.2, 0.1),
            1,
        );
        assert!(matches!(r, Err(SvphError::NotSameFiber { .. })));
    }

    #[test]
    fn e0_has_no_transversality() {
        let m = MapSpec::e0();
        assert!(matches!(
            n0_estimate(&m, &e0_cones(), 4, 4),
            Err(SvphError::NotReached { .. })
        ));
        assert!(!is_transversal(
            &m,
            &e0_cones(),
            Point2::new(0.1, 0.1),
            Point2::new(0.6, 0.1),
            1
        )
        .unwrap());
    }

    #[test]
    fn sweep_matches_brute_force() {
        let m = MapSpec::e1(0.05);
        let c = crate::cones::working_cones(&m, 64).unwrap();
        let y = Point2::new(0.4, 0.05);
        let imgs = cone_images(&m, &c, y, 4).unwrap();
        let nc = n_count_from(&imgs, 3);
        let mut brute: f64 = 0.0;
        for a in &imgs {
            let s: f64 = imgs
                .iter()
                .filter(|b| a.cone.intersects(&b.cone))
                .map(|b| b.weight)
                .sum();
            brute = brute.max(s);
        }
        assert!((nc.value - brute).abs() < 1e-12);
        let (sup, _) = n_tilde_sup(&m, &c, y, 4).unwrap();
        let mut brute_t: f64 = 0.0;
        for a in &imgs {
            for s in [a.cone.lo, a.cone.hi, 0.5 * (a.cone.lo + a.cone.hi)] {
                brute_t = brute_t.max(
                    imgs.iter()
                        .filter(|b| b.cone.contains(s))
                        .map(|b| b.weight)
                        .sum(),
                );
            }
        }
        assert!((sup - brute_t).abs() < 1e-12);
    }
}
