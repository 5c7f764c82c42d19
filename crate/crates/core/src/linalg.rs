//! Dense matrices and a jittered Cholesky factorization.
//!
//! Matrices here are small (a few hundred rows at most), so a plain row-major
//! buffer with an unblocked factorization is enough.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix buffer", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
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

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<S> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    /// Principal submatrix on `indices` (rows and columns).
    pub fn principal_submatrix(&self, indices: &[usize]) -> Self {
        Matrix::from_fn(indices.len(), indices.len(), |i, j| {
            self[(indices[i], indices[j])]
        })
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Diagonal jitter schedule, relative to the mean diagonal of the matrix.
///
/// The plain matrix is tried first; after that `first`, `first·growth`, ...
/// up to and including `last`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSchedule {
    pub first: f64,
    pub last: f64,
    pub growth: f64,
}

impl Default for JitterSchedule {
    fn default() -> Self {
        JitterSchedule {
            first: 1e-10,
            last: 1e-4,
            growth: 10.0,
        }
    }
}

impl JitterSchedule {
    /// Relative jitter levels, starting with zero.
    pub fn levels(&self) -> Vec<f64> {
        let mut levels = vec![0.0];
        let mut level = self.first;
        // the 1.0001 slack keeps the last level despite rounding in the products
        while level <= self.last * 1.0001 {
            levels.push(level);
            level *= self.growth;
        }
        levels
    }
}

/// Lower-triangular Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<S> {
    n: usize,
    lower: Vec<S>,
    jitter: S,
}

impl<S: Scalar> Cholesky<S> {
    /// Factorizes `a + jitter·I`; `None` if a pivot is not strictly positive.
    pub fn factor(a: &Matrix<S>, jitter: S) -> Option<Self> {
        assert!(a.is_square(), "Cholesky needs a square matrix");
        let n = a.rows();
        let mut lower = vec![S::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let partial = dot(&lower[i * n..i * n + j], &lower[j * n..j * n + j]);
                if i == j {
                    let pivot = a[(i, i)] + jitter - partial;
                    if !(pivot > S::zero()) || !pivot.is_finite() {
                        return None;
                    }
                    lower[i * n + i] = pivot.sqrt();
                } else {
                    lower[i * n + j] = (a[(i, j)] - partial) / lower[j * n + j];
                }
            }
        }
        Some(Cholesky { n, lower, jitter })
    }

    /// Factorizes with escalating diagonal jitter.
    pub fn with_jitter(a: &Matrix<S>, schedule: &JitterSchedule) -> Result<Self> {
        let n = a.rows();
        if n == 0 {
            return Ok(Cholesky {
                n,
                lower: Vec::new(),
                jitter: S::zero(),
            });
        }
        let mean_diag = a.diagonal().into_iter().sum::<S>() / S::from_count(n);
        let scale = if mean_diag > S::zero() { mean_diag } else { S::one() };
        for level in schedule.levels() {
            if let Some(chol) = Cholesky::factor(a, scale * S::lit(level)) {
                return Ok(chol);
            }
        }
        Err(Error::FactorizationFailure {
            max_jitter: scale.to_f64_lossy() * schedule.last,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Absolute jitter that was added to the diagonal.
    pub fn jitter(&self) -> S {
        self.jitter
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> S {
        self.lower[i * self.n + j]
    }

    /// Solves `L x = b`.
    pub fn forward(&self, b: &[S]) -> Vec<S> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        for i in 0..self.n {
            let s = dot(&self.lower[i * self.n..i * self.n + i], &x[..i]);
            x[i] = (x[i] - s) / self.l(i, i);
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn backward(&self, b: &[S]) -> Vec<S> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in i + 1..self.n {
                s = s - self.l(k, i) * x[k];
            }
            x[i] = s / self.l(i, i);
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        self.backward(&self.forward(b))
    }

    /// `b (L Lᵀ)⁻¹ bᵀ`, computed as `‖L⁻¹ b‖²`.
    pub fn quad_form_inv(&self, b: &[S]) -> S {
        let z = self.forward(b);
        dot(&z, &z)
    }

    /// `L z`, used to colour white noise.
    pub fn lower_mul(&self, z: &[S]) -> Vec<S> {
        assert_eq!(z.len(), self.n);
        (0..self.n)
            .map(|i| dot(&self.lower[i * self.n..i * self.n + i + 1], &z[..=i]))
            .collect()
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> S {
        (0..self.n)
            .map(|i| self.l(i, i).ln())
            .sum::<S>()
            * S::lit(2.0)
    }
}
