//! Small dense linear-algebra helpers.
//!
//! Matrices are stored row-major with 64-bit entries, which is also the
//! layout used by the problem serialization. Factorizations are delegated to
//! `nalgebra`; the hot matrix-vector products are written out by hand so the
//! summation order is fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out += alpha * A x`
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o += alpha * dot(self.row(i), x);
        }
    }

    /// `out += alpha * Aᵀ x`
    pub fn tr_mul_vec_acc(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            let s = alpha * xi;
            if s == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += s * a;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_acc(1.0, x, &mut out);
        out
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_mul_vec_acc(1.0, x, &mut out);
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `Aᵀ A`
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                let g_row = &mut g.data[i * n..(i + 1) * n];
                for (gij, &rj) in g_row.iter_mut().zip(row) {
                    *gij += ri * rj;
                }
            }
        }
        g
    }

    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += value;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn frobenius_sq(&self) -> f64 {
        norm_sq(&self.data)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Averages vectors by summing them in iteration order and dividing by the
/// count. Every server-side reduction goes through here so reductions are
/// reproducible bit for bit.
pub fn mean_in_order<'a, I>(vectors: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in vectors {
        debug_assert_eq!(v.len(), dim);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    acc
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Power-iteration options for [`spectral_norm`].
#[derive(Clone, Copy, Debug)]
pub struct PowerIteration {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
        }
    }
}

/// Largest singular value of `a` by power iteration on `AᵀA`.
///
/// The start vector is a fixed low-discrepancy sequence, so the result is a
/// deterministic function of the matrix.
pub fn spectral_norm(a: &Matrix, opts: PowerIteration) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut estimate = 0.0;
    for _ in 0..opts.max_iter {
        let av = a.mul_vec(&v);
        let sigma = norm(&av);
        if sigma == 0.0 {
            return 0.0;
        }
        let mut w = a.tr_mul_vec(&av);
        let nw = norm(&w);
        if nw == 0.0 {
            return sigma;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        let converged = (sigma - estimate).abs() <= opts.tol * sigma;
        estimate = sigma;
        if converged {
            break;
        }
    }
    // Rayleigh quotient at the final iterate.
    estimate.max(norm(&a.mul_vec(&v)))
}

/// Solves `A x = rhs`, refusing systems whose 2-norm condition number exceeds
/// `max_condition`. One round of iterative refinement is applied.
pub fn solve_checked(a: &Matrix, rhs: &[f64], max_condition: f64) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidParameter("solve requires a square matrix".into()));
    }
    crate::error::check_dim(a.rows(), rhs.len())?;
    let m = a.to_nalgebra();
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > max_condition {
        return Err(Error::IllConditioned(cond));
    }
    let lu = m.clone().lu();
    let b = DVector::from_column_slice(rhs);
    let mut x = lu
        .solve(&b)
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    let residual = &b - &m * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}

/// Smallest eigenvalue of the symmetric part `(A + Aᵀ)/2`.
pub fn min_symmetric_eigenvalue(a: &Matrix) -> f64 {
    let m = a.to_nalgebra();
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
