//! Small dense linear algebra: a row-major matrix, Cholesky, thin QR,
//! one-sided Jacobi SVD and a randomized truncated SVD.
//!
//! Every matrix in this crate is tiny (at most a few hundred rows), so the
//! kernels favour exactness and determinism over blocking or SIMD.

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Fills a matrix with standard-normal draws scaled by `scale`.
    pub fn randn(rows: usize, cols: usize, scale: f64, rng: &mut impl rand::Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * scale)
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[T]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn reshape(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(invalid(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · rhs`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = rhs.row(k);
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t shape mismatch");
        Self::from_fn(self.rows, rhs.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(rhs.row(j))
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        })
    }

    pub fn zip_map(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "elementwise shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|a| a * s)
    }

    pub fn add_assign(&mut self, rhs: &Self) {
        assert_eq!(self.shape(), rhs.shape(), "elementwise shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| U::of(a.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Lower Cholesky factor `L` with `L·Lᵀ = a`. Fails if `a` is not
/// numerically positive definite.
pub fn cholesky<T: Scalar>(a: &Mat<T>) -> Result<Mat<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(invalid("cholesky requires a square matrix"));
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::Numeric(format!(
                "matrix not positive definite at pivot {j} (d = {d})"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower<T: Scalar>(l: &Mat<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_t<T: Scalar>(l: &Mat<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Orthonormal basis for the columns of `a` (thin Q of a QR factorization),
/// by modified Gram–Schmidt with one re-orthogonalization pass.
///
/// Columns that are numerically dependent on their predecessors are
/// replaced by a completion vector, so the result always has exactly
/// `a.cols()` orthonormal columns (requires `a.cols() <= a.rows()`).
pub fn orthonormalize<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    let (m, k) = a.shape();
    assert!(k <= m, "orthonormalize needs cols <= rows");
    let scale = a.max_abs();
    let drop_tol = T::of(T::eps().sqrt()) * scale.max(T::min_positive_value());
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(k);
    let project_out = |v: &mut Vec<T>, basis: &[Vec<T>]| {
        for _ in 0..2 {
            for q in basis {
                let c = dot(v, q);
                for (x, &qi) in v.iter_mut().zip(q) {
                    *x -= c * qi;
                }
            }
        }
    };
    for j in 0..k {
        let mut v = a.column(j);
        project_out(&mut v, &basis);
        let mut nv = norm(&v);
        if !(nv > drop_tol) || scale == T::zero() {
            // Completion: the canonical basis vector with the largest
            // residual after projection.
            let mut best = (T::zero(), Vec::new());
            for e in 0..m {
                let mut c = vec![T::zero(); m];
                c[e] = T::one();
                project_out(&mut c, &basis);
                let nc = norm(&c);
                if nc > best.0 {
                    best = (nc, c);
                }
            }
            v = best.1;
            nv = best.0;
        }
        for x in v.iter_mut() {
            *x /= nv;
        }
        basis.push(v);
    }
    let mut q = Mat::zeros(m, k);
    for (j, v) in basis.iter().enumerate() {
        q.set_column(j, v);
    }
    q
}

/// Singular value decomposition `a = U · diag(s) · Vᵀ`, thin, with singular
/// values sorted in descending order.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U · diag(s) · Vᵀ`.
    pub fn reconstruct(&self) -> Mat<T> {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &sj) in self.s.iter().enumerate() {
                us[(i, j)] *= sj;
            }
        }
        us.matmul_t(&self.v)
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD of a matrix with `cols <= rows`.
fn jacobi_tall<T: Scalar>(a: &Mat<T>) -> Result<Svd<T>> {
    let (m, n) = a.shape();
    debug_assert!(n <= m);
    let mut g = a.transpose(); // rows of g are the columns being rotated
    let mut v = Mat::<T>::identity(n);
    let tol = T::of(T::eps() * m as f64);
    // Columns whose squared norm falls below this are numerically zero and
    // are not rotated further.
    let negligible = {
        let f = a.frobenius_norm() * T::of(T::eps());
        f * f
    };
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let gp = g.row(p);
                    let gq = g.row(q);
                    (dot(gp, gp), dot(gq, gq), dot(gp, gq))
                };
                if gamma == T::zero()
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                    || alpha <= negligible
                    || beta <= negligible
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = g[(p, k)];
                    let y = g[(q, k)];
                    g[(p, k)] = c * x - s * y;
                    g[(q, k)] = s * x + c * y;
                }
                for k in 0..n {
                    let x = v[(k, p)];
                    let y = v[(k, q)];
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps ({m}x{n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let sv: Vec<T> = (0..n).map(|j| norm(g.row(j))).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap().then(i.cmp(&j)));

    let smax = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    let null_tol = T::of(T::eps()) * T::of_usize(m.max(n)) * smax;
    let mut u_cols = Mat::zeros(m, n);
    let mut s = Vec::with_capacity(n);
    let mut v_sorted = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let sj = sv[src];
        s.push(sj);
        if sj > null_tol && sj > T::zero() {
            for k in 0..m {
                u_cols[(k, dst)] = g[(src, k)] / sj;
            }
        }
        for k in 0..n {
            v_sorted[(k, dst)] = v[(k, src)];
        }
    }
    // Null directions get an orthonormal completion; their singular values
    // are numerically zero so the product is unaffected.
    let u = orthonormalize(&u_cols);
    let u = fix_leading_columns(u_cols, u, &s, null_tol);
    Ok(Svd { u, s, v: v_sorted })
}

/// Keeps the accurately computed columns of `exact` and takes the completed
/// columns from `completed` only where the singular value was null.
fn fix_leading_columns<T: Scalar>(exact: Mat<T>, completed: Mat<T>, s: &[T], tol: T) -> Mat<T> {
    let mut out = exact;
    for (j, &sj) in s.iter().enumerate() {
        if !(sj > tol && sj > T::zero()) {
            out.set_column(j, &completed.column(j));
        }
    }
    out
}

/// Full thin SVD by one-sided Jacobi rotations.
pub fn jacobi_svd<T: Scalar>(a: &Mat<T>) -> Result<Svd<T>> {
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

/// Power iterations used by [`truncated_svd`].
pub const SVD_POWER_ITERS: usize = 8;
/// Oversampling columns used by [`truncated_svd`].
pub const SVD_OVERSAMPLE: usize = 10;
const SVD_SEED: u64 = 0x5eed_0005_7d00;

/// Top-`r` singular triplets of `m` by randomized subspace iteration with a
/// fixed seed: a Gaussian sketch with [`SVD_OVERSAMPLE`] extra columns,
/// [`SVD_POWER_ITERS`] orthonormalized power iterations, then an exact Jacobi
/// SVD of the small projected matrix.
///
/// When `r + oversample` reaches `min(d, n)` the sketch spans the whole
/// column space and the result is exact up to rounding.
pub fn truncated_svd<T: Scalar>(m: &Mat<T>, r: usize) -> Result<Svd<T>> {
    let (d, n) = m.shape();
    let full = d.min(n);
    if r > full {
        return Err(invalid(format!("rank {r} exceeds min dimension {full}")));
    }
    if !m.all_finite() {
        return Err(invalid("truncated_svd input contains non-finite values"));
    }
    if r == 0 {
        return Ok(Svd {
            u: Mat::zeros(d, 0),
            s: Vec::new(),
            v: Mat::zeros(n, 0),
        });
    }
    let k = (r + SVD_OVERSAMPLE).min(full);
    let mut rng = ChaCha8Rng::seed_from_u64(SVD_SEED);
    let omega = Mat::<T>::randn(n, k, 1.0, &mut rng);
    let mut q = orthonormalize(&m.matmul(&omega));
    if k < full {
        for _ in 0..SVD_POWER_ITERS {
            let z = orthonormalize(&m.t_matmul(&q));
            q = orthonormalize(&m.matmul(&z));
        }
    }
    let b = q.t_matmul(m); // k x n
    let small = jacobi_svd(&b)?;
    let u_full = q.matmul(&small.u);
    let svd = Svd {
        u: Mat::from_fn(d, r, |i, j| u_full[(i, j)]),
        s: small.s[..r].to_vec(),
        v: Mat::from_fn(n, r, |i, j| small.v[(i, j)]),
    };
    if svd.s.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("truncated_svd produced non-finite values".into()));
    }
    Ok(svd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::randn(rows, cols, 1.0, &mut rng)
    }

    #[test]
    fn matmul_variants_agree() {
        let a = rand_mat(5, 3, 1);
        let b = rand_mat(5, 4, 2);
        let c = rand_mat(3, 4, 3);
        let at_b = a.t_matmul(&b);
        assert!(at_b.sub(&a.transpose().matmul(&b)).max_abs() < 1e-14);
        let b_ct = b.matmul_t(&c);
        assert!(b_ct.sub(&b.matmul(&c.transpose())).max_abs() < 1e-14);
    }

    #[test]
    fn cholesky_solves() {
        let a = rand_mat(6, 6, 4);
        let spd = a.t_matmul(&a).add(&Mat::identity(6));
        let l = cholesky(&spd).unwrap();
        assert!(l.matmul_t(&l).sub(&spd).max_abs() < 1e-12);
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let x = solve_lower_t(&l, &solve_lower(&l, &b));
        let ax = spd.matmul(&Mat::from_vec(6, 1, x).unwrap());
        for i in 0..6 {
            assert!((ax[(i, 0)] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = Mat::<f64>::identity(2);
        a[(1, 1)] = -1.0;
        assert!(matches!(cholesky(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn orthonormalize_completes_rank_deficient_input() {
        let mut a = Mat::<f64>::zeros(5, 3);
        a[(0, 0)] = 2.0;
        a[(0, 1)] = 4.0; // parallel to column 0
        let q = orthonormalize(&a);
        let g = q.t_matmul(&q);
        assert!(g.sub(&Mat::identity(3)).max_abs() < 1e-12);
    }

    #[test]
    fn jacobi_wide_and_tall() {
        for (r, c) in [(7, 4), (4, 7), (5, 5)] {
            let a = rand_mat(r, c, 10 + r as u64);
            let svd = jacobi_svd(&a).unwrap();
            assert!(svd.reconstruct().sub(&a).max_abs() < 1e-12);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn truncated_rank_one_is_exact() {
        let u = rand_mat(12, 1, 5);
        let v = rand_mat(9, 1, 6);
        let m = u.matmul_t(&v);
        let svd = truncated_svd(&m, 1).unwrap();
        assert!(svd.reconstruct().sub(&m).frobenius_norm() <= 1e-6);
    }

    #[test]
    fn truncated_zero_matrix() {
        let svd = truncated_svd(&Mat::<f64>::zeros(6, 4), 3).unwrap();
        assert!(svd.s.iter().all(|&s| s == 0.0));
        let g = svd.u.t_matmul(&svd.u);
        assert!(g.sub(&Mat::identity(3)).max_abs() < 1e-8);
        let g = svd.v.t_matmul(&svd.v);
        assert!(g.sub(&Mat::identity(3)).max_abs() < 1e-8);
    }

    #[test]
    fn truncated_columns_orthonormal() {
        let m = rand_mat(32, 24, 9);
        let svd = truncated_svd(&m, 5).unwrap();
        assert!(svd.u.t_matmul(&svd.u).sub(&Mat::identity(5)).max_abs() < 1e-8);
        assert!(svd.v.t_matmul(&svd.v).sub(&Mat::identity(5)).max_abs() < 1e-8);
        assert!(svd.s.iter().all(|&s| s >= 0.0));
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_above_min_dim_rejected() {
        assert!(truncated_svd(&rand_mat(3, 5, 1), 4).is_err());
    }

    #[test]
    fn single_precision_path() {
        let m: Mat<f32> = rand_mat(8, 8, 11).cast();
        let svd = truncated_svd(&m, 8).unwrap();
        assert!(svd.reconstruct().sub(&m).max_abs() < 1e-4);
    }

    #[test]
    fn jacobi_handles_rank_deficient_input() {
        let low = rand_mat(32, 3, 21).matmul(&rand_mat(3, 14, 22));
        let noise = rand_mat(32, 14, 23).scale(1e-15);
        for a in [low.clone(), low.add(&noise)] {
            let svd = jacobi_svd(&a).unwrap();
            assert!(svd.reconstruct().sub(&a).max_abs() < 1e-10);
            assert!(svd.s[3] < 1e-12 * svd.s[0]);
        }
    }
}
