//! Dense complex matrices, row-major.
//!
//! Sizes in this crate never exceed a few hundred rows, so a plain
//! `Vec`-backed type with cache-friendly `i-k-j` products is all that is
//! needed. Vectors are represented as `Vec<C<T>>`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{dim_err, Error, Result};
use crate::scalar::{cone, czero, Real, C};

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![czero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = cone();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_diagonal(diag: &[C<T>]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C<T>> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C<T>] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [C<T>] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<C<T>> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(C<T>) -> C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_complex(&self, s: C<T>) -> Self {
        self.map(|z| z * s)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: C<T>, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Matrix product, checked.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return dim_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᴴ · rhs` without materializing the adjoint.
    pub fn adjoint_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return dim_err(format!(
                "cannot multiply ({}x{})ᴴ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = rhs.row(k);
            for (i, a) in lhs_row.iter().enumerate() {
                let a = a.conj();
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᴴ` without materializing the adjoint.
    pub fn matmul_adjoint(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return dim_err(format!(
                "cannot multiply {}x{} by ({}x{})ᴴ",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                let b = rhs.row(j);
                out.data[i * rhs.rows + j] = a
                    .iter()
                    .zip(b)
                    .fold(czero(), |acc, (&x, &y)| acc + x * y.conj());
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[C<T>]) -> Result<Vec<C<T>>> {
        if self.cols != x.len() {
            return dim_err(format!(
                "cannot apply {}x{} matrix to length-{} vector",
                self.rows,
                self.cols,
                x.len()
            ));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(czero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (r, c) = (self.rows * rhs.rows, self.cols * rhs.cols);
        Self::from_fn(r, c, |i, j| {
            self[(i / rhs.rows, j / rhs.cols)] * rhs[(i % rhs.rows, j % rhs.cols)]
        })
    }

    /// Solves `self · X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if !self.is_square() || self.rows != rhs.rows {
            return dim_err(format!(
                "cannot solve {}x{} system with {}x{} right-hand side",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        let scale = self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max);
        let tiny = scale * T::epsilon() * T::of_usize(n);
        for col in 0..n {
            let (piv, piv_abs) = (col..n).map(|r| (r, a[r * n + col].norm())).fold(
                (col, T::neg_infinity()),
                |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                },
            );
            if !(piv_abs > tiny) {
                return Err(Error::NumericalFailure(format!(
                    "matrix is singular to working precision (pivot {piv_abs:e} at column {col})"
                )));
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                for j in 0..m {
                    b.swap(col * m + j, piv * m + j);
                }
            }
            let inv_p = cone::<T>() / a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] * inv_p;
                if factor.re == T::zero() && factor.im == T::zero() {
                    continue;
                }
                a[r * n + col] = czero();
                for j in col + 1..n {
                    let v = a[col * n + j];
                    a[r * n + j] -= factor * v;
                }
                for j in 0..m {
                    let v = b[col * m + j];
                    b[r * m + j] -= factor * v;
                }
            }
        }
        for col in (0..n).rev() {
            let inv_p = cone::<T>() / a[col * n + col];
            for j in 0..m {
                let mut acc = b[col * m + j];
                for k in col + 1..n {
                    acc -= a[col * n + k] * b[k * m + j];
                }
                b[col * m + j] = acc * inv_p;
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: b,
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }
}

impl<T: Real> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;

    fn add(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;

    fn sub(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }
}

/// Panicking product for internal code paths where shapes are already known.
impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;

    fn mul(self, rhs: Self) -> CMatrix<T> {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

pub fn vec_norm_sqr<T: Real>(x: &[C<T>]) -> T {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_norm<T: Real>(x: &[C<T>]) -> T {
    vec_norm_sqr(x).sqrt()
}
