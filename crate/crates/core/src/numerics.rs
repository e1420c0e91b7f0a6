//! Dense linear algebra and first-order optimization.
//!
//! [`Matrix`] is a plain row-major buffer. The SVD is a one-sided Jacobi
//! sweep, preceded by a Householder QR when the input is tall, which keeps
//! the small singular values accurate enough for the pseudoinverse
//! truncation used by [`least_squares`].

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Relative cutoff below which singular values are dropped from a pseudoinverse.
pub const PINV_RTOL: f64 = 1e-10;
/// Adagrad denominator offset.
pub const ADAGRAD_EPS: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(mismatch("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, cols: &[C]) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            let c = c.as_ref();
            assert_eq!(c.len(), rows, "column length");
            for i in 0..rows {
                m[(i, j)] = c[i];
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(mismatch(
                "matmul",
                format_args!("lhs cols {}", self.cols),
                format_args!("rhs rows {}", rhs.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, r) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(mismatch("matmul_t", self.cols, rhs.cols));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(mismatch("matvec", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Row vector times matrix, `v^T * self`.
    pub fn vecmat(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(mismatch("vecmat", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, a) in v.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.row(i)) {
                *o += a * m;
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(
                op,
                format_args!("{:?}", self.shape()),
                format_args!("{:?}", rhs.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copy of the block `rows r0..r1`, `cols c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Matrix {
        Matrix::from_fn(r1 - r0, c1 - c0, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    /// Concatenates matrices with equal row counts left to right.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(mismatch("hstack", rows, bad.rows));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            for i in 0..rows {
                out.row_mut(i)[offset..offset + p.cols].copy_from_slice(p.row(i));
            }
            offset += p.cols;
        }
        Ok(out)
    }

    /// Stacks matrices with equal column counts top to bottom.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(mismatch("vstack", cols, bad.cols));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn pow(&self, k: usize) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(mismatch("pow", "square", format_args!("{:?}", self.shape())));
        }
        let mut out = Matrix::identity(self.rows);
        for _ in 0..k {
            out = out.matmul(self)?;
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Thin SVD `m = u * diag(s) * v^T` with `k = min(rows, cols)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `cols x k`, orthonormal columns. Square whenever `rows >= cols`.
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let us = Matrix::from_fn(self.u.rows(), k, |i, j| self.u[(i, j)] * self.s[j]);
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }

    /// Number of singular values above `rtol * s_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let cutoff = self.s.first().copied().unwrap_or(0.0) * rtol;
        self.s.iter().filter(|s| **s > cutoff).count()
    }
}

/// Singular value decomposition.
///
/// Singular values come back sorted in descending order. Each right singular
/// vector is signed so its largest-magnitude entry is positive (first such
/// entry on ties), with the matching left vector flipped alongside.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("svd input has non-finite entries".into()));
    }
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        let mut out = SvdResult { u: t.v, s: t.s, v: t.u };
        fix_signs(&mut out);
        Ok(out)
    }
}

fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(rows, 0),
            s: Vec::new(),
            v: Matrix::zeros(0, 0),
        });
    }
    // Jacobi is applied to a square factor: R from a thin QR when tall.
    let (q, r) = if rows > cols {
        let (q, r) = householder_qr(m);
        (Some(q), r)
    } else {
        (None, m.clone())
    };
    let (ur, s, v) = jacobi_square(&r)?;
    let u = match q {
        Some(q) => q.matmul(&ur)?,
        None => ur,
    };
    let mut out = SvdResult { u, s, v };
    fix_signs(&mut out);
    Ok(out)
}

/// Thin Householder QR of a tall matrix: `m = q * r`, `q` is `rows x cols`.
fn householder_qr(m: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = m.shape();
    // Work column-major for contiguous column access.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.col(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let x = &a[k][k..];
        let alpha = norm(x);
        let mut v: Vec<f64> = x.to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = norm(&v);
        if vn > 0.0 {
            for e in v.iter_mut() {
                *e /= vn;
            }
            for col in a.iter_mut().skip(k) {
                let d = 2.0 * dot(&v, &col[k..]);
                for (c, vi) in col[k..].iter_mut().zip(&v) {
                    *c -= d * vi;
                }
            }
        }
        reflectors.push(v);
    }
    let r = Matrix::from_fn(cols, cols, |i, j| if i <= j { a[j][i] } else { 0.0 });
    // Q = H_0 H_1 ... H_{cols-1} applied to the first `cols` unit vectors.
    let mut qcols: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; rows];
            e[j] = 1.0;
            e
        })
        .collect();
    for k in (0..cols).rev() {
        let v = &reflectors[k];
        if v.iter().all(|x| *x == 0.0) {
            continue;
        }
        for col in qcols.iter_mut() {
            let d = 2.0 * dot(v, &col[k..]);
            for (c, vi) in col[k..].iter_mut().zip(v) {
                *c -= d * vi;
            }
        }
    }
    (Matrix::from_columns(rows, &qcols), r)
}

/// One-sided Jacobi on a square matrix. Returns `(u, s, v)` sorted descending.
fn jacobi_square(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let n = m.cols();
    let rows = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = 1e-15;
    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let sv: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let s: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let small = smax * (rows.max(n) as f64) * f64::EPSILON;
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if sv[i] > small && sv[i] > 0.0 {
            ucols.push(a[i].iter().map(|x| x / sv[i]).collect());
        } else {
            ucols.push(vec![0.0; rows]);
            missing.push(k);
        }
    }
    complete_basis(&mut ucols, &missing, rows);
    let vcols: Vec<Vec<f64>> = order.iter().map(|&i| v[i].clone()).collect();
    Ok((Matrix::from_columns(rows, &ucols), s, Matrix::from_columns(n, &vcols)))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize], dim: usize) {
    let mut candidate = 0;
    for &k in missing {
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == k || (missing.contains(&j) && norm(c) == 0.0) {
                        continue;
                    }
                    let d = dot(&e, c);
                    for (x, y) in e.iter_mut().zip(c) {
                        *x -= d * y;
                    }
                }
            }
            let nrm = norm(&e);
            if nrm > 1e-8 {
                cols[k] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

fn fix_signs(out: &mut SvdResult) {
    for j in 0..out.v.cols() {
        let mut best = 0.0f64;
        for i in 0..out.v.rows() {
            let x = out.v[(i, j)];
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            for i in 0..out.v.rows() {
                out.v[(i, j)] = -out.v[(i, j)];
            }
            for i in 0..out.u.rows() {
                out.u[(i, j)] = -out.u[(i, j)];
            }
        }
    }
}

/// Solves `min_X ||B - X A||_F` with the truncated pseudoinverse of `A`.
///
/// `A` is `features x samples` and `B` is `targets x samples`; the result is
/// `targets x features`.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Ok(least_squares_with_rank(a, b)?.0)
}

/// As [`least_squares`], also returning the numerical rank of `A`.
pub fn least_squares_with_rank(a: &Matrix, b: &Matrix) -> Result<(Matrix, usize)> {
    if a.cols() != b.cols() {
        return Err(mismatch(
            "least_squares",
            format_args!("{} sample columns", a.cols()),
            b.cols(),
        ));
    }
    let dec = svd(a)?;
    let rank = dec.rank(PINV_RTOL);
    // X = B V S^+ U^T
    let bv = b.matmul(&dec.v)?;
    let scaled = Matrix::from_fn(bv.rows(), rank, |i, j| bv[(i, j)] / dec.s[j]);
    let ur = dec.u.block(0, dec.u.rows(), 0, rank);
    Ok((scaled.matmul_t(&ur)?, rank))
}

/// Adagrad with per-parameter accumulated squared gradients.
#[derive(Debug, Clone)]
pub struct Adagrad {
    learning_rate: f64,
    epsilon: f64,
    accum: Vec<f64>,
}

impl Adagrad {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            epsilon: ADAGRAD_EPS,
            accum: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        for ((p, g), acc) in params.iter_mut().zip(grad).zip(self.accum.iter_mut()) {
            *acc += g * g;
            *p -= self.learning_rate * g / (libm::sqrt(*acc) + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub params: Vec<f64>,
    /// Loss evaluated before each update.
    pub history: Vec<f64>,
}

/// Runs `config.epochs` Adagrad updates on `loss`, which writes the gradient
/// into its second argument and returns the loss value.
pub fn gradient_descent<F>(mut loss: F, mut params: Vec<f64>, config: &OptimizerConfig) -> Result<Descent>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut opt = Adagrad::new(params.len(), config.learning_rate);
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let value = loss(&params, &mut grad);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(value);
        opt.step(&mut params, &grad);
    }
    Ok(Descent { params, history })
}

/// Eigenvalues of a square matrix as `(re, im)` pairs, sorted by real part
/// then imaginary part.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    if m.rows() != m.cols() {
        return Err(mismatch("eigenvalues", "square", format_args!("{:?}", m.shape())));
    }
    let n = m.rows();
    let dm = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    let mut ev: Vec<(f64, f64)> = dm.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(ev)
}

/// Running sums for the coefficient of determination against a fixed
/// baseline mean vector.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct R2 {
    pub ss_res: f64,
    pub ss_tot: f64,
}

impl R2 {
    pub fn push(&mut self, actual: &[f64], predicted: &[f64], baseline: &[f64]) {
        for ((a, p), m) in actual.iter().zip(predicted).zip(baseline) {
            self.ss_res += (a - p) * (a - p);
            self.ss_tot += (a - m) * (a - m);
        }
    }

    /// `1 - ss_res / ss_tot`; NaN when the baseline explains everything
    /// (zero total variance).
    pub fn value(&self) -> f64 {
        if self.ss_tot == 0.0 {
            f64::NAN
        } else {
            1.0 - self.ss_res / self.ss_tot
        }
    }
}

/// Coefficient of determination of paired columns with baseline = mean of `actual`.
pub fn r2_against_own_mean(actual: &[Vec<f64>], predicted: &[Vec<f64>]) -> f64 {
    let Some(first) = actual.first() else {
        return f64::NAN;
    };
    let mut mean = vec![0.0; first.len()];
    for a in actual {
        for (m, v) in mean.iter_mut().zip(a) {
            *m += v;
        }
    }
    let count = actual.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    let mut acc = R2::default();
    for (a, p) in actual.iter().zip(predicted) {
        acc.push(a, p, &mean);
    }
    acc.value()
}
