//! Spectral data of the discretised transfer operator, SRB densities and the
//! diagnostics built on them.

use crate::error::{Result, SvphError};
use crate::geometry::{centered, wrap01, Point2};
use crate::map::MapSpec;
use crate::spline::PeriodicSpline;
use crate::transfer::{fft2_inplace, FiberDensity, FourierOperator, GridFunction, UlamOperator};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

type C = Complex64;

/// A linear operator acting on complex vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C]) -> Vec<C>;
    /// Transpose (not conjugate transpose).
    fn apply_t(&self, x: &[C]) -> Vec<C>;
    /// Dense form, when small enough to hold.
    fn dense(&self) -> Option<DMatrix<C>> {
        None
    }
}

impl LinearOperator for UlamOperator {
    fn dim(&self) -> usize {
        self.matrix.n
    }
    fn apply(&self, x: &[C]) -> Vec<C> {
        let (re, im): (Vec<f64>, Vec<f64>) = x.iter().map(|z| (z.re, z.im)).unzip();
        let mut a = vec![0.0; re.len()];
        let mut b = vec![0.0; re.len()];
        self.matrix.matvec(&re, &mut a);
        self.matrix.matvec(&im, &mut b);
        a.into_iter().zip(b).map(|(r, i)| C::new(r, i)).collect()
    }
    fn apply_t(&self, x: &[C]) -> Vec<C> {
        let (re, im): (Vec<f64>, Vec<f64>) = x.iter().map(|z| (z.re, z.im)).unzip();
        let mut a = vec![0.0; re.len()];
        let mut b = vec![0.0; re.len()];
        self.matrix.matvec_t(&re, &mut a);
        self.matrix.matvec_t(&im, &mut b);
        a.into_iter().zip(b).map(|(r, i)| C::new(r, i)).collect()
    }
}

impl LinearOperator for FourierOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &[C]) -> Vec<C> {
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.matrix * v).iter().copied().collect()
    }
    fn apply_t(&self, x: &[C]) -> Vec<C> {
        let v = nalgebra::DVector::from_column_slice(x);
        (self.matrix.transpose() * v).iter().copied().collect()
    }
    fn dense(&self) -> Option<DMatrix<C>> {
        Some(self.matrix.clone())
    }
}

/// An eigenvalue with the residual `||A v - nu v|| / ||v||` of its computed vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenRecord {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

impl EigenRecord {
    pub fn value(&self) -> C {
        C::new(self.re, self.im)
    }
    pub fn modulus(&self) -> f64 {
        self.value().norm()
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: C,
    pub vector: Vec<C>,
    pub residual: f64,
}

fn norm(v: &[C]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn residual(op: &dyn LinearOperator, nu: C, v: &[C]) -> f64 {
    let av = op.apply(v);
    let r: Vec<C> = av.iter().zip(v).map(|(a, b)| a - nu * b).collect();
    norm(&r) / norm(v).max(1e-300)
}

/// Null vector of `(m - shift I)` by inverse iteration.
fn inverse_iteration(m: &DMatrix<C>, shift: C) -> Vec<C> {
    let n = m.nrows();
    let mut a = m.clone();
    let pert = C::new(1e-10 * (1.0 + shift.norm()), 1e-12);
    for i in 0..n {
        a[(i, i)] -= shift + pert;
    }
    let lu = a.lu();
    let mut v =
        nalgebra::DVector::from_fn(n, |i, _| C::new(1.0 + 0.37 * i as f64, 0.11 * i as f64));
    for _ in 0..4 {
        match lu.solve(&v) {
            Some(w) => {
                let nn = w.norm();
                v = w / C::new(nn, 0.0);
            }
            None => break,
        }
    }
    v.iter().copied().collect()
}

fn sort_by_modulus(vals: &mut [C]) {
    vals.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
}

/// Top `k` eigenpairs: a dense Schur solve when the dimension is at most 4096,
/// otherwise restarted Arnoldi.
pub fn top_eigenpairs(op: &dyn LinearOperator, k: usize) -> Result<Vec<Eigenpair>> {
    if let Some(m) = op.dense().filter(|m| m.nrows() <= 4096) {
        let schur = nalgebra::Schur::try_new(m.clone(), 1e-14, 10_000)
            .ok_or_else(|| SvphError::SolverStall("Schur decomposition did not converge".into()))?;
        let mut vals: Vec<C> = schur
            .eigenvalues()
            .map(|e| e.iter().copied().collect())
            .unwrap_or_default();
        sort_by_modulus(&mut vals);
        return Ok(vals
            .into_iter()
            .take(k)
            .map(|nu| {
                let v = inverse_iteration(&m, nu);
                let residual = residual(op, nu, &v);
                Eigenpair {
                    value: nu,
                    vector: v,
                    residual,
                }
            })
            .collect());
    }
    arnoldi_eigenpairs(op, k, (4 * k + 20).min(op.dim()), 12)
}

fn arnoldi_eigenpairs(
    op: &dyn LinearOperator,
    k: usize,
    m: usize,
    restarts: usize,
) -> Result<Vec<Eigenpair>> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut start: Vec<C> = (0..n)
        .map(|_| C::new(rng.gen::<f64>() + 0.5, 0.0))
        .collect();
    let mut best: Vec<Eigenpair> = Vec::new();
    for _ in 0..restarts {
        let nv = norm(&start);
        let mut basis: Vec<Vec<C>> = vec![start.iter().map(|z| z / nv).collect()];
        let mut h = DMatrix::<C>::zeros(m + 1, m);
        let mut steps = m;
        for j in 0..m {
            let mut w = op.apply(&basis[j]);
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nw = norm(&w);
            h[(j + 1, j)] = C::new(nw, 0.0);
            if nw < 1e-13 {
                steps = j + 1;
                break;
            }
            basis.push(w.iter().map(|z| z / nw).collect());
        }
        let hm = h.view((0, 0), (steps, steps)).into_owned();
        let schur = nalgebra::Schur::try_new(hm.clone(), 1e-14, 10_000).ok_or_else(|| {
            SvphError::SolverStall("Hessenberg eigenproblem did not converge".into())
        })?;
        let mut vals: Vec<C> = schur
            .eigenvalues()
            .map(|e| e.iter().copied().collect())
            .unwrap_or_default();
        sort_by_modulus(&mut vals);
        let mut pairs = Vec::new();
        for nu in vals.into_iter().take(k) {
            let y = inverse_iteration(&hm, nu);
            let mut v = vec![C::new(0.0, 0.0); n];
            for (yi, b) in y.iter().zip(&basis) {
                v.iter_mut().zip(b).for_each(|(x, z)| *x += yi * z);
            }
            let r = residual(op, nu, &v);
            pairs.push(Eigenpair {
                value: nu,
                vector: v,
                residual: r,
            });
        }
        let worst = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
        best = pairs;
        if worst < 1e-8 {
            break;
        }
        // restart from the sum of the wanted Ritz vectors
        start = vec![C::new(0.0, 0.0); n];
        for p in &best {
            let s = norm(&p.vector).max(1e-300);
            start
                .iter_mut()
                .zip(&p.vector)
                .for_each(|(x, y)| *x += y / s);
        }
    }
    Ok(best)
}

/// Eigenvalues near the unit circle and the Cesaro check of the spectral projectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<EigenRecord>,
    pub delta_gap: f64,
    /// Indices into `eigenvalues` with modulus above `1 - delta_gap`.
    pub peripheral: Vec<usize>,
    /// `max over peripheral nu of |Pi_nu v - (1/N) sum nu^{-k} L^k v| / |v|`
    pub cesaro_error: f64,
    pub cesaro_terms: usize,
    /// Set when a second eigenvalue lies within `1e-3` of one.
    pub non_unique_warning: bool,
}

impl SpectralReport {
    /// Peripheral eigenvalues are `q`-th roots of unity for some `q <= q_max`, up to ten times their residual.
    pub fn peripheral_roots_of_unity(&self, q_max: u32) -> bool {
        self.peripheral.iter().all(|&i| {
            let e = &self.eigenvalues[i];
            (1..=q_max).any(|q| (e.value().powu(q) - 1.0).norm() <= 10.0 * e.residual.max(1e-12))
        })
    }
}

pub fn peripheral_spectrum(
    op: &dyn LinearOperator,
    k: usize,
    delta_gap: f64,
    cesaro_terms: usize,
) -> Result<SpectralReport> {
    let pairs = top_eigenpairs(op, k)?;
    let peripheral: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.value.norm() > 1.0 - delta_gap)
        .map(|(i, _)| i)
        .collect();
    if let Some(&i) = peripheral.iter().find(|&&i| pairs[i].residual > 1e-6) {
        return Err(SvphError::SolverStall(format!(
            "peripheral eigenvalue {} has residual {:.3e}",
            pairs[i].value, pairs[i].residual
        )));
    }
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v: Vec<C> = (0..n).map(|_| C::new(rng.gen::<f64>(), 0.0)).collect();
    let mut cesaro_error: f64 = 0.0;
    for &i in &peripheral {
        let p = &pairs[i];
        // left eigenvector from the transpose
        let left = left_vector(op, p.value)?;
        let proj_coef = dot_t(&left, &v) / dot_t(&left, &p.vector);
        let mut acc = vec![C::new(0.0, 0.0); n];
        let mut cur = v.clone();
        let inv = p.value.inv();
        let mut w = C::new(1.0, 0.0);
        for _ in 0..cesaro_terms {
            acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += w * c);
            cur = op.apply(&cur);
            w *= inv;
        }
        let diff: Vec<C> = acc
            .iter()
            .zip(&p.vector)
            .map(|(a, r)| a / cesaro_terms as f64 - proj_coef * r)
            .collect();
        cesaro_error = cesaro_error.max(norm(&diff) / norm(&v));
    }
    Ok(SpectralReport {
        eigenvalues: pairs
            .iter()
            .map(|p| EigenRecord {
                re: p.value.re,
                im: p.value.im,
                residual: p.residual,
            })
            .collect(),
        delta_gap,
        non_unique_warning: pairs
            .iter()
            .filter(|p| (p.value - 1.0).norm() < 1e-3)
            .count()
            > 1,
        peripheral,
        cesaro_error,
        cesaro_terms,
    })
}

fn dot_t(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Transposed<'a>(&'a dyn LinearOperator);

impl LinearOperator for Transposed<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[C]) -> Vec<C> {
        self.0.apply_t(x)
    }
    fn apply_t(&self, x: &[C]) -> Vec<C> {
        self.0.apply(x)
    }
    fn dense(&self) -> Option<DMatrix<C>> {
        self.0.dense().map(|m| m.transpose())
    }
}

fn left_vector(op: &dyn LinearOperator, nu: C) -> Result<Vec<C>> {
    if let Some(m) = op.dense().filter(|m| m.nrows() <= 4096) {
        return Ok(inverse_iteration(&m.transpose(), nu));
    }
    let t = Transposed(op);
    let pairs = arnoldi_eigenpairs(&t, 8, 60.min(op.dim()), 6)?;
    pairs
        .into_iter()
        .min_by(|a, b| (a.value - nu).norm().total_cmp(&(b.value - nu).norm()))
        .map(|p| p.vector)
        .ok_or_else(|| SvphError::SolverStall("no left eigenvector".into()))
}

/// How to compute the SRB density.
#[derive(Debug, Clone, Copy)]
pub enum SrbMethod {
    /// Fixed vector of the Ulam matrix.
    Ulam { tol: f64, max_iter: usize },
    /// Histogram of long orbits.
    Orbit {
        steps: u64,
        seeds: usize,
        burn_in: usize,
        seed: u64,
    },
}

impl SrbMethod {
    pub fn ulam() -> Self {
        SrbMethod::Ulam {
            tol: 1e-11,
            max_iter: 200_000,
        }
    }

    pub fn orbit(seed: u64) -> Self {
        SrbMethod::Orbit {
            steps: 100_000_000,
            seeds: 64,
            burn_in: 1000,
            seed,
        }
    }
}

/// One step of the map with a perturbation at the level of the floating-point
/// grid, which keeps orbits of maps such as `2x mod 1` from collapsing onto a
/// dyadic rational.
#[inline]
pub fn orbit_step(map: &MapSpec, p: Point2, rng: &mut ChaCha8Rng) -> Point2 {
    let q = map.apply(p);
    let j = (rng.gen::<f64>() - 0.5) * 4.0 * f64::EPSILON;
    Point2::new(wrap01(q.x + j), q.theta)
}

pub fn srb_density(map: &MapSpec, method: SrbMethod, nx: usize, nt: usize) -> Result<GridFunction> {
    match method {
        SrbMethod::Ulam { tol, max_iter } => {
            let op = crate::transfer::ulam_matrix(map, nx, nt)?;
            Ok(op.fixed_density(tol, max_iter)?.0)
        }
        SrbMethod::Orbit {
            steps,
            seeds,
            burn_in,
            seed,
        } => Ok(orbit_srb(map, steps, seeds, burn_in, seed, nx, nt).density),
    }
}

/// Orbit histogram together with the per-seed agreement diagnostic.
#[derive(Debug, Clone)]
pub struct OrbitSrb {
    pub density: GridFunction,
    /// Fraction of seeds whose mean of `cos 2 pi theta` or `cos 2 pi x` sits more than three
    /// batch-means standard errors from the pooled mean.
    pub outlier_fraction: f64,
    /// Raised when more than 5% of seeds are outliers, a sign of several physical measures.
    pub non_unique_warning: bool,
}

struct SeedRun {
    counts: Vec<u64>,
    means: [f64; 2],
    se: [f64; 2],
}

pub fn orbit_srb(
    map: &MapSpec,
    steps: u64,
    seeds: usize,
    burn_in: usize,
    seed: u64,
    nx: usize,
    nt: usize,
) -> OrbitSrb {
    use rayon::prelude::*;
    let per = (steps / seeds as u64) as usize;
    let batches = 16usize;
    let runs: Vec<SeedRun> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
            let mut p = Point2::new(rng.gen(), rng.gen());
            for _ in 0..burn_in {
                p = orbit_step(map, p, &mut rng);
            }
            let mut counts = vec![0u64; nx * nt];
            let blen = (per / batches).max(1);
            let mut bsum = vec![[0.0f64; 2]; batches];
            for t in 0..per {
                p = orbit_step(map, p, &mut rng);
                let i = ((p.x * nx as f64) as usize).min(nx - 1);
                let j = ((p.theta * nt as f64) as usize).min(nt - 1);
                counts[j * nx + i] += 1;
                let b = (t / blen).min(batches - 1);
                bsum[b][0] += (TAU * p.theta).cos();
                bsum[b][1] += (TAU * p.x).cos();
            }
            let mut means = [0.0; 2];
            let mut se = [0.0; 2];
            for k in 0..2 {
                let bm: Vec<f64> = (0..batches)
                    .map(|b| {
                        let len = if b == batches - 1 {
                            per - blen * (batches - 1)
                        } else {
                            blen
                        };
                        bsum[b][k] / len.max(1) as f64
                    })
                    .collect();
                let m = bsum.iter().map(|v| v[k]).sum::<f64>() / per.max(1) as f64;
                let var = bm.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
                means[k] = m;
                se[k] = (var / batches as f64).sqrt();
            }
            SeedRun { counts, means, se }
        })
        .collect();
    let mut counts = vec![0u64; nx * nt];
    for r in &runs {
        counts.iter_mut().zip(&r.counts).for_each(|(a, b)| *a += b);
    }
    let pooled: Vec<f64> = (0..2)
        .map(|k| runs.iter().map(|r| r.means[k]).sum::<f64>() / seeds as f64)
        .collect();
    let outliers = runs
        .iter()
        .filter(|r| (0..2).any(|k| (r.means[k] - pooled[k]).abs() > 3.0 * r.se[k] + 1e-12))
        .count();
    let total = (per * seeds) as f64;
    let cells = (nx * nt) as f64;
    let outlier_fraction = outliers as f64 / seeds as f64;
    OrbitSrb {
        density: GridFunction {
            nx,
            nt,
            data: counts.iter().map(|&c| c as f64 / total * cells).collect(),
        },
        outlier_fraction,
        non_unique_warning: outlier_fraction > 0.05,
    }
}

/// Fourier coefficients `g^(xi) = int g e^{-2 pi i <xi, z>}` of a grid function
/// via the 2-D FFT, indexed by signed frequencies.
pub struct Spectrum2 {
    n: usize,
    coef: Vec<C>,
}

impl Spectrum2 {
    pub fn of(g: &GridFunction) -> Result<Self> {
        if g.nx != g.nt {
            return Err(SvphError::InvalidArgument(
                "Fourier norms need a square grid".into(),
            ));
        }
        let n = g.nx;
        let mut data: Vec<C> = g.data.iter().map(|&v| C::new(v, 0.0)).collect();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        fft2_inplace(&mut data, n, fft.as_ref());
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|z| *z *= s);
        Ok(Self { n, coef: data })
    }

    /// `|g^(xi1, xi2)|` for `|xi| < n / 2`.
    pub fn magnitude(&self, xi1: i64, xi2: i64) -> f64 {
        let n = self.n as i64;
        self.coef[(xi2.rem_euclid(n) * n + xi1.rem_euclid(n)) as usize].norm()
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn signed(&self, k: usize) -> i64 {
        if k <= self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }
}

/// `max over |xi| <= kw of |g^(xi)| / (1 + 2 pi |xi|)`, a proxy for the `(C^1)'` norm.
pub fn weak_norm(g: &GridFunction, kw: usize) -> Result<f64> {
    let spec = Spectrum2::of(g)?;
    let kmax = kw.min(spec.size() / 2 - 1) as i64;
    let mut best: f64 = 0.0;
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            let r = ((a * a + b * b) as f64).sqrt();
            if r <= kmax as f64 {
                best = best.max(spec.magnitude(a, b) / (1.0 + TAU * r));
            }
        }
    }
    Ok(best)
}

/// `sqrt(sum (1 + |xi|^2) |h^(xi)|^2)` over all resolved modes.
pub fn eigenfunction_h1(h: &GridFunction) -> Result<f64> {
    let spec = Spectrum2::of(h)?;
    let n = spec.size();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            let (a, b) = (spec.signed(i) as f64, spec.signed(j) as f64);
            s += (1.0 + a * a + b * b) * spec.coef[j * n + i].norm_sqr();
        }
    }
    Ok(s.sqrt())
}

/// `|| h - h_* beta ||` in the weak norm, with `beta(theta) = int h(x, theta) dx`.
pub fn factorization_error(h: &GridFunction, fiber: &FiberDensity, kw: usize) -> Result<f64> {
    weak_norm(&factorization_residual(h, fiber), kw)
}

pub fn factorization_residual(h: &GridFunction, fiber: &FiberDensity) -> GridFunction {
    let beta = h.theta_marginal();
    let hs = fiber.grid(h.nx, h.nt);
    let data = hs
        .data
        .iter()
        .enumerate()
        .map(|(k, v)| h.data[k] - v * beta[k / h.nx])
        .collect();
    GridFunction {
        nx: h.nx,
        nt: h.nt,
        data,
    }
}

/// Ulam fiber densities on the rows of an `nx x nt` grid.
fn ulam_fiber_grid(map: &MapSpec, nx: usize, nt: usize) -> Result<GridFunction> {
    let mut data = Vec::with_capacity(nx * nt);
    if map.f_pert.is_theta_independent() {
        let (row, _) = crate::transfer::fiber_h_star_ulam(map, 0.0, nx)?;
        for _ in 0..nt {
            data.extend_from_slice(&row);
        }
    } else {
        for j in 0..nt {
            let (row, _) =
                crate::transfer::fiber_h_star_ulam(map, (j as f64 + 0.5) / nt as f64, nx)?;
            data.extend(row);
        }
    }
    Ok(GridFunction { nx, nt, data })
}

/// Weak-norm distance between the Ulam fiber densities at `nx` cells and the
/// spectral ones; the resolution floor of factorisation errors on an `nx x nx` grid.
pub fn grid_tolerance(map: &MapSpec, fiber: &FiberDensity, nx: usize, kw: usize) -> Result<f64> {
    let ulam = ulam_fiber_grid(map, nx, nx)?;
    let exact = fiber.grid(nx, nx);
    let g = GridFunction {
        nx,
        nt: nx,
        data: ulam
            .data
            .iter()
            .zip(&exact.data)
            .map(|(a, b)| a - b)
            .collect(),
    };
    weak_norm(&g, kw)
}

/// Factorisation error of the product `h_*^{Ulam}(x, theta) beta(theta)`, with the
/// fiber factor taken from the Ulam route and compared against the spectral one.
pub fn synthetic_factorization_control(
    map: &MapSpec,
    fiber: &FiberDensity,
    beta: &dyn Fn(f64) -> f64,
    nx: usize,
    kw: usize,
) -> Result<f64> {
    let ulam = ulam_fiber_grid(map, nx, nx)?;
    let data = ulam
        .data
        .iter()
        .enumerate()
        .map(|(k, v)| v * beta(((k / nx) as f64 + 0.5) / nx as f64))
        .collect();
    factorization_error(&GridFunction { nx, nt: nx, data }, fiber, kw)
}

/// A zero of the averaged drift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldZero {
    pub theta: f64,
    pub derivative: f64,
    pub stable: bool,
    /// Basin `(lo, hi)` of a stable zero, possibly wrapping past one.
    pub basin: Option<(f64, f64)>,
}

/// `omega_bar(theta) = int omega(x, theta) h_*(x, theta) dx` on a grid, its zeros and basins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AveragedField {
    pub theta: Vec<f64>,
    pub values: Vec<f64>,
    pub zeros: Vec<FieldZero>,
}

fn omega_bar_at(map: &MapSpec, fiber: &FiberDensity, theta: f64, quad: usize) -> f64 {
    (0..quad)
        .map(|i| {
            let x = (i as f64 + 0.5) / quad as f64;
            map.omega.value(x, theta) * fiber.eval(x, theta)
        })
        .sum::<f64>()
        / quad as f64
}

pub fn averaged_field(
    map: &MapSpec,
    fiber: &FiberDensity,
    n_theta: usize,
) -> Result<AveragedField> {
    let quad = 512;
    let theta: Vec<f64> = (0..n_theta).map(|j| j as f64 / n_theta as f64).collect();
    let values: Vec<f64> = theta
        .iter()
        .map(|&t| omega_bar_at(map, fiber, t, quad))
        .collect();
    let spline = PeriodicSpline::new(values.clone());
    let mut roots = Vec::new();
    for j in 0..n_theta {
        let (a, b) = (values[j], values[(j + 1) % n_theta]);
        let (ta, tb) = (theta[j], theta[j] + 1.0 / n_theta as f64);
        if a == 0.0 {
            roots.push(ta);
            continue;
        }
        if a * b < 0.0 {
            let (mut lo, mut hi, mut flo) = (ta, tb, a);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = omega_bar_at(map, fiber, mid, quad);
                if fm * flo > 0.0 {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(wrap01(0.5 * (lo + hi)));
        }
    }
    let mut zeros: Vec<FieldZero> = Vec::new();
    for &t in &roots {
        let d = spline.eval(t)[1];
        if d.abs() < 1e-6 {
            return Err(SvphError::DegenerateZero {
                theta: t,
                derivative: d,
            });
        }
        zeros.push(FieldZero {
            theta: t,
            derivative: d,
            stable: d < 0.0,
            basin: None,
        });
    }
    let k = zeros.len();
    for i in 0..k {
        if zeros[i].stable {
            // zeros alternate in stability, so the neighbours bound the basin
            let prev = zeros[(i + k - 1) % k].theta;
            let next = zeros[(i + 1) % k].theta;
            zeros[i].basin = Some(if k == 1 {
                (zeros[i].theta, zeros[i].theta + 1.0)
            } else {
                (prev, next)
            });
        }
    }
    Ok(AveragedField {
        theta,
        values,
        zeros,
    })
}

fn in_arc(t: f64, lo: f64, hi: f64) -> bool {
    let len = (hi - lo).rem_euclid(1.0);
    let len = if len == 0.0 { 1.0 } else { len };
    (t - lo).rem_euclid(1.0) < len
}

/// Collapse the mass of each basin onto `h_*(., theta_j)` at the stable zero.
pub fn hat_p_projection(
    h: &GridFunction,
    field: &AveragedField,
    fiber: &FiberDensity,
) -> GridFunction {
    let beta = h.theta_marginal();
    let mut out = GridFunction::zeros(h.nx, h.nt);
    for z in field.zeros.iter().filter(|z| z.stable) {
        let (lo, hi) = z.basin.expect("stable zeros carry a basin");
        let mass: f64 = (0..h.nt)
            .filter(|&j| in_arc((j as f64 + 0.5) / h.nt as f64, lo, hi))
            .map(|j| beta[j])
            .sum::<f64>()
            / h.nt as f64;
        let row = ((z.theta * h.nt as f64) as usize).min(h.nt - 1);
        for i in 0..h.nx {
            out.data[row * h.nx + i] +=
                mass * h.nt as f64 * fiber.eval((i as f64 + 0.5) / h.nx as f64, z.theta);
        }
    }
    out
}

/// Mass of `h` within distance `radius` of `theta0`.
pub fn mass_near(h: &GridFunction, theta0: f64, radius: f64) -> f64 {
    let beta = h.theta_marginal();
    beta.iter()
        .enumerate()
        .filter(|(j, _)| centered((*j as f64 + 0.5) / h.nt as f64 - theta0).abs() <= radius)
        .map(|(_, b)| b)
        .sum::<f64>()
        / h.nt as f64
}

/// Correlation estimates `C(n) = int phi (psi o F^n) h - int phi h int psi h` and their exponential fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub c: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// `3` standard errors, floored at the rounding level of the estimator.
    pub noise_floor: Vec<f64>,
    /// Lags `1..=resolved` have `|C(n)|` above the noise floor.
    pub resolved: usize,
    pub rate: f64,
    pub r2: f64,
}

pub fn correlation_decay(
    map: &MapSpec,
    phi: &dyn Fn(Point2) -> f64,
    psi: &dyn Fn(Point2) -> f64,
    n_max: usize,
    steps: u64,
    seeds: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    if seeds < 2 {
        return Err(SvphError::InvalidArgument(
            "need at least two seeds for error bars".into(),
        ));
    }
    let per = (steps / seeds as u64) as usize;
    if per <= n_max + 1 {
        return Err(SvphError::InvalidArgument(
            "orbit segments shorter than the lag range".into(),
        ));
    }
    let mut est = vec![vec![0.0; n_max + 1]; seeds];
    let mut scale: f64 = 0.0;
    for (s, row) in est.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7_919).wrapping_add(s as u64));
        let mut p = Point2::new(rng.gen(), rng.gen());
        for _ in 0..1000 {
            p = orbit_step(map, p, &mut rng);
        }
        let mut a = Vec::with_capacity(per);
        let mut b = Vec::with_capacity(per);
        for _ in 0..per {
            a.push(phi(p));
            b.push(psi(p));
            p = orbit_step(map, p, &mut rng);
        }
        let len = per - n_max;
        let ma = a[..len].iter().sum::<f64>() / len as f64;
        for (n, slot) in row.iter_mut().enumerate() {
            let mb = b[n..n + len].iter().sum::<f64>() / len as f64;
            *slot = (0..len).map(|t| (a[t] - ma) * (b[t + n] - mb)).sum::<f64>() / len as f64;
        }
        scale = scale.max(
            a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                * b.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        );
    }
    let mut c = vec![0.0; n_max + 1];
    let mut se = vec![0.0; n_max + 1];
    for n in 0..=n_max {
        let mean = est.iter().map(|r| r[n]).sum::<f64>() / seeds as f64;
        let var = est.iter().map(|r| (r[n] - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
        c[n] = mean;
        se[n] = (var / seeds as f64).sqrt();
    }
    let floor: Vec<f64> = se.iter().map(|s| 3.0 * s + 1e-12 * scale).collect();
    let mut resolved = 0;
    for n in 1..=n_max {
        if c[n].abs() > floor[n] {
            resolved = n;
        } else {
            break;
        }
    }
    let (rate, r2) = if resolved >= 3 {
        let xs: Vec<f64> = (1..=resolved).map(|n| n as f64).collect();
        let ys: Vec<f64> = (1..=resolved).map(|n| c[n].abs().ln()).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys);
        (-slope, r2)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(CorrelationReport {
        c,
        standard_error: se,
        noise_floor: floor,
        resolved,
        rate,
        r2,
    })
}

/// Least squares `y = a x + b`; returns `(a, b, R^2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    (a, b, r2)
}

/// Correlations computed from the Ulam operator: `int psi L^n(phi h)`.
pub fn ulam_correlation(
    op: &UlamOperator,
    h: &GridFunction,
    phi: &dyn Fn(Point2) -> f64,
    psi: &dyn Fn(Point2) -> f64,
    n_max: usize,
) -> Vec<f64> {
    let cells = h.data.len();
    let pv: Vec<f64> = (0..cells).map(|k| phi(h.center(k))).collect();
    let qv: Vec<f64> = (0..cells).map(|k| psi(h.center(k))).collect();
    let mean = |v: &[f64]| v.iter().zip(&h.data).map(|(a, b)| a * b).sum::<f64>() / cells as f64;
    let (mp, mq) = (mean(&pv), mean(&qv));
    let mut cur: Vec<f64> = pv.iter().zip(&h.data).map(|(a, b)| a * b).collect();
    let mut next = vec![0.0; cells];
    let mut out = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        out.push(cur.iter().zip(&qv).map(|(a, b)| a * b).sum::<f64>() / cells as f64 - mp * mq);
        op.matrix.matvec(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    out
}

/// One periodic orbit of a fast map together with its Birkhoff average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub points: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XConstantReport {
    pub theta: f64,
    pub max_period: usize,
    pub orbits_checked: usize,
    pub consistent: bool,
    pub min_average: f64,
    pub max_average: f64,
    /// The first orbit and the first orbit whose average differs from it.
    pub witness: Option<(PeriodicOrbit, PeriodicOrbit)>,
}

/// Periodic points of `f_theta` of exact period `p`, one representative list per orbit.
pub fn periodic_orbits(map: &MapSpec, theta: f64, p: usize) -> Result<Vec<Vec<f64>>> {
    let d = map.degree as u64;
    let count = d
        .checked_pow(p as u32)
        .ok_or(SvphError::DepthTooLarge { depth: p, max: 20 })?;
    if count > 5_000_000 {
        return Err(SvphError::DepthTooLarge { depth: p, max: 12 });
    }
    let f = |x: f64| map.fiber_lift(x, theta);
    let g = |x: f64| (0..p).fold(x, |y, _| f(y)) - x;
    let g0 = g(0.0);
    let k0 = g0.ceil() as i64;
    let mut orbits: Vec<Vec<f64>> = Vec::new();
    let mut seen: Vec<f64> = Vec::new();
    for k in k0..k0 + (count as i64 - 1) {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < k as f64 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        let x = wrap01(0.5 * (lo + hi));
        let orbit: Vec<f64> = (0..p)
            .scan(x, |y, _| {
                let cur = *y;
                *y = wrap01(f(*y));
                Some(cur)
            })
            .collect();
        // skip points whose exact period is a proper divisor of p
        let minimal = (1..p)
            .filter(|q| p % q == 0)
            .all(|q| centered(orbit[q] - x).abs() > 1e-9);
        if !minimal || seen.iter().any(|s| centered(s - x).abs() < 1e-9) {
            continue;
        }
        seen.extend(orbit.iter().copied());
        orbits.push(orbit);
    }
    Ok(orbits)
}

/// Compare Birkhoff averages of `omega(., theta)` along all periodic orbits of period at most `max_period`.
pub fn x_constant_test(
    map: &MapSpec,
    theta: f64,
    max_period: usize,
    tol: f64,
) -> Result<XConstantReport> {
    let mut all: Vec<PeriodicOrbit> = Vec::new();
    for p in 1..=max_period {
        for pts in periodic_orbits(map, theta, p)? {
            let average =
                pts.iter().map(|&x| map.omega.value(x, theta)).sum::<f64>() / pts.len() as f64;
            all.push(PeriodicOrbit {
                points: pts,
                average,
            });
        }
    }
    let min = all.iter().map(|o| o.average).fold(f64::INFINITY, f64::min);
    let max = all
        .iter()
        .map(|o| o.average)
        .fold(f64::NEG_INFINITY, f64::max);
    let witness = all.first().and_then(|first| {
        all.iter()
            .find(|o| (o.average - first.average).abs() > tol)
            .map(|o| (first.clone(), o.clone()))
    });
    Ok(XConstantReport {
        theta,
        max_period,
        orbits_checked: all.len(),
        consistent: witness.is_none(),
        min_average: min,
        max_average: max,
        witness,
    })
}
