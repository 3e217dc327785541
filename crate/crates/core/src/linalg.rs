//! Dense linear-algebra helpers built on `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Smallest and largest eigenvalue of a symmetric matrix.
///
/// The input is symmetrized as `(M + Mᵀ)/2` before decomposition.
pub fn sym_eig_extremes(m: &Mat) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Largest modulus among the eigenvalues of a square matrix.
pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max)
}

/// Largest absolute asymmetry `max |M_ij - M_ji|`.
pub fn asymmetry(m: &Mat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solves the discrete Lyapunov equation `AᵀPA − P = −Q` for `P`.
///
/// Uses the Kronecker form `(I − Aᵀ⊗Aᵀ) vec(P) = vec(Q)`; intended for the
/// small state dimensions handled here.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(dim_err!("lyapunov: A is {}x{}, Q is {}x{}", n, a.ncols(), q.nrows(), q.ncols()));
    }
    let at = a.transpose();
    let kron = at.kronecker(&at);
    let lhs = Mat::identity(n * n, n * n) - kron;
    let rhs = Vector::from_iterator(n * n, q.iter().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let p = Mat::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Thin singular value decomposition `X = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × k`, `k = min(rows, cols)`
    pub u: Mat,
    pub s: Vec<f64>,
    /// `cols × k`
    pub v: Mat,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on the columns of a square or tall `w`, accumulating the
/// rotations in `v`. Returns `(U, s, V)` unsorted.
fn jacobi_columns(mut w: Mat) -> (Mat, Vec<f64>, Mat) {
    let n = w.ncols();
    let mut v = Mat::identity(n, n);
    let tol = f64::EPSILON * w.nrows() as f64;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.column(p), w.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (a, b) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * a - s * b;
                        m[(i, q)] = s * a + c * b;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    for (j, &sj) in s.iter().enumerate() {
        if sj > 0.0 {
            w.column_mut(j).unscale_mut(sj);
        }
    }
    (w, s, v)
}

/// SVD by Householder QR followed by one-sided Jacobi on the triangular factor.
///
/// Jacobi keeps the singular vectors accurate when `X` is rank deficient, as
/// Hankel matrices of low-order systems are.
pub fn svd(x: &Mat) -> Svd {
    let (rows, cols) = x.shape();
    if rows < cols {
        let t = svd(&x.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    if cols == 0 {
        return Svd { u: Mat::zeros(rows, 0), s: Vec::new(), v: Mat::zeros(0, 0) };
    }
    let qr = x.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let (ur, s, v) = jacobi_columns(r);
    let u = q * ur;
    let mut idx: Vec<usize> = (0..cols).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Svd {
        u: Mat::from_fn(rows, cols, |i, j| u[(i, idx[j])]),
        s: idx.iter().map(|&j| s[j]).collect(),
        v: Mat::from_fn(cols, cols, |i, j| v[(i, idx[j])]),
    }
}

impl Svd {
    /// `X⁺ Y` using only singular values above `eps`.
    pub fn solve(&self, y: &Mat, eps: f64) -> Mat {
        let k = self.s.iter().filter(|&&s| s > eps).count();
        let uty = self.u.columns(0, k).transpose() * y;
        let scaled = Mat::from_fn(k, y.ncols(), |i, j| uty[(i, j)] / self.s[i]);
        self.v.columns(0, k) * scaled
    }
}

/// Least-squares solution of `X·Θ ≈ Y` via SVD.
///
/// Fails with [`Error::RankDeficient`] when the ratio of the smallest to the
/// largest singular value of `X` falls below `rcond`.
pub fn lstsq(x: &Mat, y: &Mat, rcond: f64) -> Result<Mat> {
    if x.nrows() != y.nrows() {
        return Err(dim_err!("lstsq: {} regressor rows vs {} target rows", x.nrows(), y.nrows()));
    }
    let d = svd(x);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let smin = d.s.last().copied().unwrap_or(0.0);
    if !(smax > 0.0) || smin / smax < rcond || x.nrows() < x.ncols() {
        let condition = if smin > 0.0 && x.nrows() >= x.ncols() { smax / smin } else { f64::INFINITY };
        return Err(Error::RankDeficient { condition });
    }
    Ok(d.solve(y, 0.0))
}

/// Minimum-norm least-squares solution of `X·Θ ≈ Y`, discarding singular
/// values below `rcond · s_max`. Returns the solution and the retained rank.
pub fn lstsq_min_norm(x: &Mat, y: &Mat, rcond: f64) -> Result<(Mat, usize)> {
    if x.nrows() != y.nrows() {
        return Err(dim_err!("lstsq: {} regressor rows vs {} target rows", x.nrows(), y.nrows()));
    }
    let d = svd(x);
    let smax = d.s.first().copied().unwrap_or(0.0);
    if !(smax > 0.0) {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let eps = rcond * smax;
    let rank = d.s.iter().filter(|&&s| s > eps).count();
    Ok((d.solve(y, eps), rank))
}

/// `count` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let (a, b) = (libm::log10(lo), libm::log10(hi));
            (0..count)
                .map(|i| {
                    if i == count - 1 {
                        hi
                    } else {
                        libm::pow(10.0, a + (b - a) * i as f64 / (count - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

/// Euclidean norm with a fixed left-to-right summation order.
pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().fold(0.0, |acc, x| acc + x * x))
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}
