//! GMRES for complex linear maps.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::dense::{norm, DenseMatrix};
use crate::sparse::CsrMatrix;
use crate::C64;

/// A square complex linear map.
pub trait LinearMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
}

impl LinearMap for DenseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.matvec(x)
    }
}

impl LinearMap for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.matvec(x)
    }
}

/// A closure with a fixed dimension.
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[C64]) -> Vec<C64> + Sync> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnMap { dim, f }
    }
}

impl<F: Fn(&[C64]) -> Vec<C64> + Sync> LinearMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        (self.f)(x)
    }
}

#[derive(Clone, Debug)]
pub struct GmresOptions {
    pub tol: f64,
    /// Defaults to `10 n` capped at 20 000.
    pub max_iter: Option<usize>,
    /// Restart length; `None` runs without restart.
    pub restart: Option<usize>,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { tol: 1e-5, max_iter: None, restart: None }
    }
}

impl GmresOptions {
    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| (10 * n).clamp(1, 20_000))
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual `‖b − Ax‖ / ‖b‖` before the first and after each
    /// iteration.
    pub residuals: Vec<f64>,
    #[serde(serialize_with = "as_seconds")]
    pub matvec_time: Duration,
    #[serde(serialize_with = "as_seconds")]
    pub total_time: Duration,
    pub converged: bool,
}

pub(crate) fn as_seconds<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }

    pub fn matvec_time_per_iteration(&self) -> Duration {
        if self.iterations == 0 {
            Duration::ZERO
        } else {
            self.matvec_time / self.iterations as u32
        }
    }
}

/// Complex Givens rotation zeroing `b` in `(a, b)`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    if b == C64::new(0.0, 0.0) {
        return (1.0, C64::new(0.0, 0.0));
    }
    if a == C64::new(0.0, 0.0) {
        return (0.0, b.conj() / b.norm());
    }
    let na = a.norm();
    let r = (na * na + b.norm_sqr()).sqrt();
    let c = na / r;
    let s = (a / na) * b.conj() / r;
    (c, s)
}

/// GMRES with modified Gram–Schmidt Arnoldi and Givens rotations.
/// Reaching `max_iter` is reported through `converged = false`.
pub fn gmres(map: &dyn LinearMap, rhs: &[C64], opts: &GmresOptions) -> (Vec<C64>, SolveReport) {
    let start = Instant::now();
    let n = map.dim();
    assert_eq!(rhs.len(), n, "gmres right-hand side dimension");
    let zero = C64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let mut report = SolveReport::default();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        report.residuals.push(0.0);
        report.converged = true;
        report.total_time = start.elapsed();
        return (x, report);
    }
    let max_iter = opts.max_iter_for(n);
    let restart = opts.restart.unwrap_or(max_iter).max(1);
    let matvec = |v: &[C64], report: &mut SolveReport| {
        let t = Instant::now();
        let y = map.apply(v);
        report.matvec_time += t.elapsed();
        y
    };
    report.residuals.push(1.0);
    let mut r = rhs.to_vec();
    let mut rnorm = bnorm;
    'outer: loop {
        let m = restart.min(max_iter - report.iterations);
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / rnorm).collect());
        // columns of the rotated Hessenberg matrix
        let mut h: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut rot: Vec<(f64, C64)> = Vec::with_capacity(m);
        let mut g = vec![C64::new(rnorm, 0.0)];
        let mut done = false;
        for j in 0..m {
            let mut w = matvec(&basis[j], &mut report);
            let mut col = vec![zero; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij: C64 = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                col[i] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let wnorm = norm(&w);
            col[j + 1] = C64::new(wnorm, 0.0);
            for (i, &(c, s)) in rot.iter().enumerate() {
                let a = col[i];
                let b = col[i + 1];
                col[i] = c * a + s * b;
                col[i + 1] = -s.conj() * a + c * b;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = zero;
            rot.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s.conj() * gj);
            h.push(col);
            report.iterations += 1;
            let res = g[j + 1].norm() / bnorm;
            report.residuals.push(res);
            let breakdown = wnorm <= 1e-14 * bnorm;
            if res <= opts.tol || breakdown || report.iterations >= max_iter {
                done = res <= opts.tol || breakdown;
                break;
            }
            basis.push(w.iter().map(|v| v / wnorm).collect());
        }
        // back substitution
        let k = h.len();
        let mut y = vec![zero; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in i + 1..k {
                s -= h[l][i] * y[l];
            }
            y[i] = s / h[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.iter_mut().zip(v).for_each(|(xk, vk)| *xk += yi * vk);
        }
        if done {
            report.converged = true;
            break 'outer;
        }
        if report.iterations >= max_iter {
            break 'outer;
        }
        let ax = matvec(&x, &mut report);
        r = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        rnorm = norm(&r);
        if rnorm / bnorm <= opts.tol {
            report.converged = true;
            break 'outer;
        }
    }
    report.total_time = start.elapsed();
    (x, report)
}

/// True relative residual `‖b − Ax‖ / ‖b‖`.
pub fn true_residual(map: &dyn LinearMap, x: &[C64], rhs: &[C64]) -> f64 {
    let ax = map.apply(x);
    let r: Vec<C64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    norm(&r) / norm(rhs)
}
