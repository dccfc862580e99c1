//! Transfer operator: pointwise action, Ulam and Fourier discretisations, and
//! the fiber densities of the fast maps.

use crate::branches::preimages;
use crate::error::{Result, SvphError};
use crate::geometry::{wrap01, Point2};
use crate::map::MapSpec;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Cell-averaged function on an `nx x nt` grid, stored row by row in theta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub nx: usize,
    pub nt: usize,
    pub data: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(nx: usize, nt: usize) -> Self {
        Self {
            nx,
            nt,
            data: vec![0.0; nx * nt],
        }
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(nx: usize, nt: usize, f: impl Fn(Point2) -> f64 + Sync) -> Self {
        let data = (0..nx * nt)
            .into_par_iter()
            .map(|k| f(Self::center_of(nx, nt, k)))
            .collect();
        Self { nx, nt, data }
    }

    fn center_of(nx: usize, nt: usize, k: usize) -> Point2 {
        Point2::new(
            ((k % nx) as f64 + 0.5) / nx as f64,
            ((k / nx) as f64 + 0.5) / nt as f64,
        )
    }

    pub fn center(&self, k: usize) -> Point2 {
        Self::center_of(self.nx, self.nt, k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    pub fn cell_of(&self, p: Point2) -> usize {
        let i = ((wrap01(p.x) * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((wrap01(p.theta) * self.nt as f64) as usize).min(self.nt - 1);
        j * self.nx + i
    }

    /// Midpoint-rule integral over the torus.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn l1_distance(&self, o: &GridFunction) -> f64 {
        self.data
            .iter()
            .zip(&o.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Rescale to unit integral.
    pub fn normalized(mut self) -> Self {
        let s = self.integral();
        if s != 0.0 {
            self.data.iter_mut().for_each(|v| *v /= s);
        }
        self
    }

    /// Marginal density in theta: `beta(theta_j) = int h(x, theta_j) dx`.
    pub fn theta_marginal(&self) -> Vec<f64> {
        (0..self.nt)
            .map(|j| (0..self.nx).map(|i| self.at(i, j)).sum::<f64>() / self.nx as f64)
            .collect()
    }
}

/// `L^n u (z) = sum over y in F^{-n}(z) of u(y) / |det D F^n(y)|`.
pub fn apply_transfer(
    map: &MapSpec,
    u: &dyn Fn(Point2) -> f64,
    z: Point2,
    n: usize,
) -> Result<f64> {
    Ok(preimages(map, z, n)?
        .iter()
        .map(|q| u(q.point) / q.jac.det().abs())
        .sum())
}

/// `L^n u` sampled at the cell centres of a grid.
pub fn transfer_on_grid(
    map: &MapSpec,
    u: &(dyn Fn(Point2) -> f64 + Sync),
    n: usize,
    nx: usize,
    nt: usize,
) -> Result<GridFunction> {
    let data: Result<Vec<f64>> = (0..nx * nt)
        .into_par_iter()
        .map(|k| apply_transfer(map, u, GridFunction::center_of(nx, nt, k), n))
        .collect();
    Ok(GridFunction {
        nx,
        nt,
        data: data?,
    })
}

/// `max over the points of L^n 1`.
pub fn sup_l_n_1(map: &MapSpec, points: &[Point2], n: usize) -> Result<f64> {
    let vals: Result<Vec<f64>> = points
        .par_iter()
        .map(|&p| apply_transfer(map, &|_| 1.0, p, n))
        .collect();
    Ok(vals?.into_iter().fold(0.0, f64::max))
}

/// Uniform grid of cell centres.
pub fn grid_points(k: usize) -> Vec<Point2> {
    (0..k * k)
        .map(|i| {
            Point2::new(
                ((i % k) as f64 + 0.5) / k as f64,
                ((i / k) as f64 + 0.5) / k as f64,
            )
        })
        .collect()
}

/// Compressed-column sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k] as usize] += self.vals[k] * xj;
            }
        }
    }

    /// `y = A^T x`
    pub fn matvec_t(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                s += self.vals[k] * x[self.row_idx[k] as usize];
            }
            *yj = s;
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.vals[self.col_ptr[j]..self.col_ptr[j + 1]].iter().sum())
            .collect()
    }

    /// Triplets `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1])
                .map(move |k| (self.row_idx[k] as usize, j, self.vals[k]))
        })
    }
}

/// Ulam discretisation: entry `(i, j)` estimates the fraction of cell `j` mapped into cell `i`.
#[derive(Debug, Clone)]
pub struct UlamOperator {
    pub nx: usize,
    pub nt: usize,
    pub matrix: SparseMatrix,
    /// Largest deviation of a raw column sum from one before renormalisation.
    pub raw_defect: f64,
}

/// Sub-rectangles per cell, `(along x, along theta)`. Each sub-rectangle is pushed
/// forward as the product of the images of its two mid-lines, and its mass is
/// spread over the cells this image rectangle overlaps.
pub const ULAM_SAMPLES: (usize, usize) = (4, 4);

/// Fractions of the interval `[lo, hi]` (not wrapped) falling in each of `n` unit-circle cells.
pub(crate) fn interval_overlaps(lo: f64, hi: f64, n: usize, mut emit: impl FnMut(usize, f64)) {
    let (lo, hi) = if hi < lo { (hi, lo) } else { (lo, hi) };
    let len = hi - lo;
    let nf = n as f64;
    if len * nf < 1e-12 {
        emit((lo * nf).floor().rem_euclid(nf) as usize % n, 1.0);
        return;
    }
    let first = (lo * nf).floor() as i64;
    let last = ((hi * nf).ceil() as i64).max(first + 1);
    for k in first..last {
        let a = (k as f64 / nf).max(lo);
        let b = ((k + 1) as f64 / nf).min(hi);
        if b > a {
            emit(k.rem_euclid(n as i64) as usize, (b - a) / len);
        }
    }
}

pub fn ulam_matrix(map: &MapSpec, nx: usize, nt: usize) -> Result<UlamOperator> {
    if nx == 0 || nt == 0 || nx * nt > u32::MAX as usize {
        return Err(SvphError::InvalidArgument(format!(
            "bad Ulam grid {nx} x {nt}"
        )));
    }
    let (sx, st) = ULAM_SAMPLES;
    let w = 1.0 / (sx * st) as f64;
    let (hx, ht) = (1.0 / (nx * sx) as f64, 1.0 / (nt * st) as f64);
    let cols: Vec<(Vec<(u32, f64)>, f64)> = (0..nx * nt)
        .into_par_iter()
        .map(|c| {
            let (ci, cj) = (c % nx, c / nx);
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(4 * sx * st);
            let mut xs: Vec<(usize, f64)> = Vec::with_capacity(8);
            let mut ts: Vec<(usize, f64)> = Vec::with_capacity(8);
            for a in 0..sx {
                let x0 = (ci * sx + a) as f64 * hx;
                let xm = x0 + 0.5 * hx;
                for b in 0..st {
                    let t0 = (cj * st + b) as f64 * ht;
                    let tm = t0 + 0.5 * ht;
                    xs.clear();
                    ts.clear();
                    interval_overlaps(map.lift(x0, tm).0, map.lift(x0 + hx, tm).0, nx, |i, f| {
                        xs.push((i, f))
                    });
                    interval_overlaps(map.lift(xm, t0).1, map.lift(xm, t0 + ht).1, nt, |j, f| {
                        ts.push((j, f))
                    });
                    for &(j, fj) in &ts {
                        for &(i, fi) in &xs {
                            let row = (j * nx + i) as u32;
                            let v = w * fi * fj;
                            match entries.iter_mut().find(|e| e.0 == row) {
                                Some(e) => e.1 += v,
                                None => entries.push((row, v)),
                            }
                        }
                    }
                }
            }
            entries.sort_by_key(|e| e.0);
            let sum: f64 = entries.iter().map(|e| e.1).sum();
            entries.iter_mut().for_each(|e| e.1 /= sum);
            (entries, (sum - 1.0).abs())
        })
        .collect();
    let mut col_ptr = Vec::with_capacity(nx * nt + 1);
    let mut row_idx = Vec::new();
    let mut vals = Vec::new();
    let mut raw_defect: f64 = 0.0;
    col_ptr.push(0);
    for (entries, defect) in cols {
        raw_defect = raw_defect.max(defect);
        for (r, v) in entries {
            row_idx.push(r);
            vals.push(v);
        }
        col_ptr.push(row_idx.len());
    }
    Ok(UlamOperator {
        nx,
        nt,
        matrix: SparseMatrix {
            n: nx * nt,
            col_ptr,
            row_idx,
            vals,
        },
        raw_defect,
    })
}

impl UlamOperator {
    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        let mut out = GridFunction::zeros(self.nx, self.nt);
        self.matrix.matvec(&u.data, &mut out.data);
        out
    }

    /// Fixed density by power iteration, stopping when `||M h - h||_1 <= tol`.
    pub fn fixed_density(&self, tol: f64, max_iter: usize) -> Result<(GridFunction, f64)> {
        let n = self.matrix.n;
        let mut h = vec![1.0; n];
        let mut next = vec![0.0; n];
        let mut res = f64::INFINITY;
        for _ in 0..max_iter {
            self.matrix.matvec(&h, &mut next);
            let s: f64 = next.iter().sum::<f64>() / n as f64;
            next.iter_mut().for_each(|v| *v /= s);
            res = h.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
            std::mem::swap(&mut h, &mut next);
            if res <= tol {
                // report the residual of the returned vector itself
                self.matrix.matvec(&h, &mut next);
                let r = h.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
                return Ok((
                    GridFunction {
                        nx: self.nx,
                        nt: self.nt,
                        data: h,
                    },
                    r,
                ));
            }
        }
        Err(SvphError::NoConvergence {
            what: "Ulam fixed density",
            iterations: max_iter,
            residual: res,
        })
    }
}

/// Galerkin matrix of the transfer operator in the Fourier basis `e_xi`, `|xi|_inf <= k`.
#[derive(Debug, Clone)]
pub struct FourierOperator {
    pub k: usize,
    pub quadrature: usize,
    pub matrix: DMatrix<Complex64>,
}

impl FourierOperator {
    pub fn dim(&self) -> usize {
        (2 * self.k + 1) * (2 * self.k + 1)
    }

    /// Position of the mode `(xi1, xi2)`.
    pub fn index(&self, xi1: i64, xi2: i64) -> usize {
        let w = 2 * self.k as i64 + 1;
        ((xi2 + self.k as i64) * w + (xi1 + self.k as i64)) as usize
    }

    pub fn mode(&self, idx: usize) -> (i64, i64) {
        let w = 2 * self.k + 1;
        (
            (idx % w) as i64 - self.k as i64,
            (idx / w) as i64 - self.k as i64,
        )
    }
}

/// Largest frequency present in `exp(-2 pi i <F(z), xi>)` for `|xi|_inf <= k`, estimated by Carson's rule.
pub fn fourier_bandwidth(map: &MapSpec, k: usize) -> usize {
    let kf = map.f_pert.max_frequency().max(map.omega.max_frequency());
    let phase = TAU * k as f64 * (map.f_pert.sup_bound() + map.epsilon * map.omega.sup_bound());
    (map.degree as usize + 1) * k + ((phase + 2.0) * kf as f64).ceil() as usize
}

pub fn fourier_matrix(
    map: &MapSpec,
    k: usize,
    quadrature: Option<usize>,
) -> Result<FourierOperator> {
    if k > 32 {
        return Err(SvphError::InvalidArgument(format!(
            "Fourier truncation {k} exceeds 32"
        )));
    }
    let kp = map.f_pert.max_frequency().max(map.omega.max_frequency());
    let q = quadrature.unwrap_or(8 * (map.degree as usize * k + kp.max(1)));
    let needed = fourier_bandwidth(map, k);
    if q < 2 * needed + 1 {
        return Err(SvphError::QuadratureUnderResolved { points: q, needed });
    }
    // phases of the two coordinates of F at the nodes z = (a/q, b/q)
    let nodes: Vec<(Complex64, Complex64)> = (0..q * q)
        .map(|idx| {
            let (x, t) = ((idx % q) as f64 / q as f64, (idx / q) as f64 / q as f64);
            let (a, b) = map.lift(x, t);
            (
                Complex64::from_polar(1.0, -TAU * wrap01(a)),
                Complex64::from_polar(1.0, -TAU * wrap01(b)),
            )
        })
        .collect();
    let w = 2 * k + 1;
    let dim = w * w;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(q);
    let ki = k as i64;
    let rows: Vec<Vec<Complex64>> = (0..dim)
        .into_par_iter()
        .map(|r| {
            let xi1 = (r % w) as i64 - ki;
            let xi2 = (r / w) as i64 - ki;
            let mut g: Vec<Complex64> = nodes
                .iter()
                .map(|(p1, p2)| ipow(*p1, xi1) * ipow(*p2, xi2))
                .collect();
            fft2_inplace(&mut g, q, fft.as_ref());
            let norm = 1.0 / (q * q) as f64;
            (0..dim)
                .map(|c| {
                    let e1 = ((c % w) as i64 - ki).rem_euclid(q as i64) as usize;
                    let e2 = ((c / w) as i64 - ki).rem_euclid(q as i64) as usize;
                    g[e2 * q + e1] * norm
                })
                .collect()
        })
        .collect();
    let matrix = DMatrix::from_fn(dim, dim, |r, c| rows[r][c]);
    Ok(FourierOperator {
        k,
        quadrature: q,
        matrix,
    })
}

fn ipow(z: Complex64, e: i64) -> Complex64 {
    if e >= 0 {
        z.powu(e as u32)
    } else {
        z.conj().powu((-e) as u32)
    }
}

/// In-place 2-D transform of a `q x q` row-major array with the given 1-D plan.
pub(crate) fn fft2_inplace(g: &mut [Complex64], q: usize, fft: &dyn rustfft::Fft<f64>) {
    for row in g.chunks_mut(q) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); q];
    for c in 0..q {
        for r in 0..q {
            col[r] = g[r * q + c];
        }
        fft.process(&mut col);
        for r in 0..q {
            g[r * q + c] = col[r];
        }
    }
}

/// Invariant densities `h_*(., theta)` of the fast maps, held as Fourier series in `x`.
#[derive(Debug, Clone)]
pub struct FiberDensity {
    /// Coefficients `c_j`, `j = -jmax..=jmax`, one vector per theta node.
    coeffs: Vec<Vec<Complex64>>,
    jmax: usize,
    /// Number of theta nodes; one when the fast map does not depend on theta.
    nodes: usize,
}

/// Fourier-Galerkin fixed point of the fiber transfer operator at a fixed theta.
fn fiber_coefficients(map: &MapSpec, theta: f64, jmax: usize) -> Result<Vec<Complex64>> {
    let d = map.degree as usize;
    let kp = map.f_pert.max_frequency().max(1);
    let amp = TAU * map.f_pert.sup_bound();
    let m = (8 * (d * jmax + kp) + ((amp + 2.0) * (jmax * kp) as f64) as usize).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let w = 2 * jmax + 1;
    let phase: Vec<Complex64> = (0..m)
        .map(|i| {
            Complex64::from_polar(
                1.0,
                -TAU * wrap01(map.fiber_lift(i as f64 / m as f64, theta)),
            )
        })
        .collect();
    // A[k][j] = int exp(-2 pi i k f(x)) exp(2 pi i j x) dx
    let mut a = vec![vec![Complex64::new(0.0, 0.0); w]; w];
    let mut g = vec![Complex64::new(0.0, 0.0); m];
    for (kk, row) in a.iter_mut().enumerate() {
        let k = kk as i64 - jmax as i64;
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = ipow(phase[i], k);
        }
        fft.process(&mut g);
        for (jj, entry) in row.iter_mut().enumerate() {
            let j = jj as i64 - jmax as i64;
            // forward FFT gives sum g e^{-2 pi i n x}; we need e^{+2 pi i j x}, i.e. n = -j
            *entry = g[(-j).rem_euclid(m as i64) as usize] / m as f64;
        }
    }
    let mut h = vec![Complex64::new(0.0, 0.0); w];
    h[jmax] = Complex64::new(1.0, 0.0);
    for it in 0..2000 {
        let next: Vec<Complex64> = a
            .iter()
            .map(|row| row.iter().zip(&h).map(|(x, y)| x * y).sum())
            .collect();
        let scale = next[jmax];
        let next: Vec<Complex64> = next.iter().map(|v| v / scale).collect();
        let diff = next
            .iter()
            .zip(&h)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        h = next;
        if diff < 1e-15 && it > 2 {
            return Ok(h);
        }
    }
    Err(SvphError::NoConvergence {
        what: "fiber density",
        iterations: 2000,
        residual: f64::NAN,
    })
}

impl FiberDensity {
    /// `jmax` Fourier modes per fiber; `theta_nodes` is ignored when the fast map is theta-independent.
    pub fn compute(map: &MapSpec, jmax: usize, theta_nodes: usize) -> Result<Self> {
        let nodes = if map.f_pert.is_theta_independent() {
            1
        } else {
            theta_nodes.max(4)
        };
        let coeffs: Result<Vec<_>> = (0..nodes)
            .into_par_iter()
            .map(|k| fiber_coefficients(map, k as f64 / nodes as f64, jmax))
            .collect();
        Ok(Self {
            coeffs: coeffs?,
            jmax,
            nodes,
        })
    }

    pub fn for_map(map: &MapSpec) -> Result<Self> {
        Self::compute(map, 64, 32)
    }

    fn eval_node(&self, node: usize, x: f64) -> f64 {
        let c = &self.coeffs[node];
        let mut s = c[self.jmax].re;
        let base = Complex64::from_polar(1.0, TAU * x);
        let mut e = base;
        for j in 1..=self.jmax {
            s += 2.0 * (c[self.jmax + j] * e).re;
            e *= base;
        }
        s
    }

    /// `h_*(x, theta)`; cubic Lagrange interpolation between theta nodes.
    pub fn eval(&self, x: f64, theta: f64) -> f64 {
        if self.nodes == 1 {
            return self.eval_node(0, x);
        }
        let n = self.nodes as f64;
        let s = wrap01(theta) * n;
        let i = s.floor() as i64;
        let u = s - i as f64;
        let idx = |o: i64| (i + o).rem_euclid(self.nodes as i64) as usize;
        let v = [
            self.eval_node(idx(-1), x),
            self.eval_node(idx(0), x),
            self.eval_node(idx(1), x),
            self.eval_node(idx(2), x),
        ];
        let w = [
            -u * (u - 1.0) * (u - 2.0) / 6.0,
            (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
            -(u + 1.0) * u * (u - 2.0) / 2.0,
            (u + 1.0) * u * (u - 1.0) / 6.0,
        ];
        v.iter().zip(&w).map(|(a, b)| a * b).sum()
    }

    pub fn theta_independent(&self) -> bool {
        self.nodes == 1
    }

    /// Samples of `h_*(., theta)` at `nx` cell centres.
    pub fn sample(&self, theta: f64, nx: usize) -> Vec<f64> {
        (0..nx)
            .map(|i| self.eval((i as f64 + 0.5) / nx as f64, theta))
            .collect()
    }

    /// `h_*` on a two-dimensional grid.
    pub fn grid(&self, nx: usize, nt: usize) -> GridFunction {
        GridFunction::from_fn(nx, nt, |p| self.eval(p.x, p.theta))
    }
}

/// `h_*(., theta)` by power iteration of the one-dimensional Ulam operator of `f_theta`.
pub fn fiber_h_star_ulam(map: &MapSpec, theta: f64, nx: usize) -> Result<(Vec<f64>, f64)> {
    let pieces = 8;
    let hp = 1.0 / (nx * pieces) as f64;
    let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nx);
    for c in 0..nx {
        let mut e: Vec<(usize, f64)> = Vec::new();
        for a in 0..pieces {
            let x0 = (c * pieces + a) as f64 * hp;
            interval_overlaps(
                map.fiber_lift(x0, theta),
                map.fiber_lift(x0 + hp, theta),
                nx,
                |i, f| match e.iter_mut().find(|v| v.0 == i) {
                    Some(v) => v.1 += f / pieces as f64,
                    None => e.push((i, f / pieces as f64)),
                },
            );
        }
        cols.push(e);
    }
    let mut h = vec![1.0; nx];
    let mut res = f64::INFINITY;
    for _ in 0..10_000 {
        let mut next = vec![0.0; nx];
        for (c, e) in cols.iter().enumerate() {
            for &(i, v) in e {
                next[i] += v * h[c];
            }
        }
        let s: f64 = next.iter().sum::<f64>() / nx as f64;
        next.iter_mut().for_each(|v| *v /= s);
        res = next.iter().zip(&h).map(|(a, b)| (a - b).abs()).sum::<f64>() / nx as f64;
        h = next;
        if res <= 1e-12 {
            return Ok((h, res));
        }
    }
    Err(SvphError::NoConvergence {
        what: "fiber Ulam density",
        iterations: 10_000,
        residual: res,
    })
}

/// `(1 / h_*) L^n h_*` at a point, where `L` is the full two-dimensional transfer operator.
pub fn shadowing_ratio_at(map: &MapSpec, fiber: &FiberDensity, p: Point2, n: usize) -> Result<f64> {
    let num = apply_transfer(map, &|q| fiber.eval(q.x, q.theta), p, n)?;
    Ok(num / fiber.eval(p.x, p.theta))
}

/// `sup (1 / h_*) L^n h_*` over the given points.
pub fn shadowing_ratio(
    map: &MapSpec,
    fiber: &FiberDensity,
    points: &[Point2],
    n: usize,
) -> Result<f64> {
    let vals: Result<Vec<f64>> = points
        .par_iter()
        .map(|&p| shadowing_ratio_at(map, fiber, p, n))
        .collect();
    Ok(vals?.into_iter().fold(0.0, f64::max))
}
