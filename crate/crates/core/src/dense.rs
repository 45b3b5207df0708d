//! Small dense linear algebra.
//!
//! Everything in the reduced model is either tiny (r x r) or moderately sized
//! (snapshot Gram matrices, 1D finite element matrices), so the kernels here
//! are plain column-major loops: cyclic Jacobi for symmetric eigenproblems,
//! Cholesky for SPD systems, and partially pivoted LU for the nonsymmetric
//! convection-linearized systems.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use thiserror::Error;

/// Off-diagonal Frobenius threshold, relative to `||A||_F`, that stops the Jacobi sweeps.
pub const JACOBI_TOLERANCE: f64 = 1e-14;
/// Maximum number of cyclic Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op} requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal {off_norm:e})")]
    NotConverged { sweeps: usize, off_norm: f64 },
    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotSpd { pivot: usize, value: f64 },
    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },
    #[error("matrix power order must be at least 1")]
    InvalidOrder,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Real vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self((0..len).map(f).collect())
    }

    /// Unit vector `e_index`.
    pub fn unit(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[index] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, alpha: f64) -> DenseVector {
        Self(self.0.iter().map(|x| alpha * x).collect())
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &DenseVector) -> DenseVector {
        assert_eq!(self.len(), other.len(), "axpy length mismatch");
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for DenseVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Column-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
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

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps column-major storage. Panics if the length is not `rows * cols`.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major data length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; convenient for fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        Self::from_fn(nrows, ncols, |i, j| rows[i][j])
    }

    /// Stacks vectors of equal length as columns.
    pub fn from_columns(columns: &[DenseVector]) -> Self {
        let rows = columns.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "column length mismatch");
            data.extend_from_slice(c);
        }
        Self {
            rows,
            cols: columns.len(),
            data,
        }
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

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector::from(self.col(j))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        self.add_scaled(-1.0, other)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                for (d, a) in dst.iter_mut().zip(self.col(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn tr_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "tr_matmul",
                expected: self.rows,
                actual: other.rows,
            });
        }
        Ok(DenseMatrix::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "matvec",
                expected: self.cols,
                actual: x.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.col(k)) {
                *o += a * xk;
            }
        }
        Ok(DenseVector(out))
    }

    /// `self^T * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "tr_matvec",
                expected: self.rows,
                actual: x.len(),
            });
        }
        Ok(DenseVector::from_fn(self.cols, |j| dot(self.col(j), x)))
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry magnitude.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for j in 0..self.cols {
            for i in 0..j {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Replaces the matrix by `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        for j in 0..self.cols {
            for i in 0..j {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenvalues (nonincreasing) and orthonormal column eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

fn require_square(op: &'static str, a: &DenseMatrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LinalgError::NotSquare {
            op,
            rows: a.rows(),
            cols: a.cols(),
        })
    }
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back nonincreasing; equal eigenvalues keep the order of
/// the diagonal position they converged in, which for already-diagonal input
/// is the original column order.
pub fn sym_eig(a: &DenseMatrix) -> Result<EigenDecomposition> {
    require_square("sym_eig", a)?;
    let asymmetry = a.relative_asymmetry();
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite { op: "sym_eig" });
    }
    let n = a.rows();
    let mut work = a.clone();
    work.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let threshold = JACOBI_TOLERANCE * a.frobenius_norm();

    let mut converged = off_diagonal_norm(&work) <= threshold;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NotConverged {
                sweeps,
                off_norm: off_diagonal_norm(&work),
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut work, &mut v, p, q);
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&work) <= threshold;
    }

    let diag = work.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep ascending index order
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.col_mut(dst).copy_from_slice(v.col(src));
    }
    Ok(EigenDecomposition { values, vectors })
}

fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    // Skip entries already negligible against both diagonal entries.
    if apq.abs() <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = 0.0;
        a[(q, p)] = 0.0;
        return;
    }
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    let (vp, vq) = two_columns_mut(v, p, q);
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn two_columns_mut(m: &mut DenseMatrix, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let rows = m.rows;
    let (left, right) = m.data.split_at_mut(q * rows);
    (&mut left[p * rows..(p + 1) * rows], &mut right[..rows])
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: DenseMatrix,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        require_square("cholesky", a)?;
        let n = a.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotSpd { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// `L^-1 b`; `b` must have the factor's dimension.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..self.dim() {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn solve(&self, b: &[f64]) -> Result<DenseVector> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                op: "cholesky solve",
                expected: n,
                actual: b.len(),
            });
        }
        let l = &self.lower;
        let mut y = self.forward(b);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(DenseVector(y))
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
pub fn solve_spd(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    Cholesky::factor(a)?.solve(b)
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        require_square("lu", a)?;
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot_abs > scale * f64::EPSILON * 1e-2) {
                return Err(LinalgError::Singular { pivot: k });
            }
            if pivot_row != k {
                perm.swap(k, pivot_row);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                lu[(i, k)] /= pivot;
            }
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                if ukj == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    let lik = lu[(i, k)];
                    lu[(i, j)] -= lik * ukj;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<DenseVector> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                op: "lu solve",
                expected: n,
                actual: b.len(),
            });
        }
        let lu = &self.lu;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= lu[(i, k)] * x[k];
            }
            x[i] = s / lu[(i, i)];
        }
        let x = DenseVector(x);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(LinalgError::NonFinite { op: "lu solve" })
        }
    }
}

/// Solves a general square system with partial pivoting.
pub fn solve_general(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    Lu::factor(a)?.solve(b)
}

/// `A^m` by repeated multiplication; `m = 1` returns a clone of `A`.
pub fn mat_power(a: &DenseMatrix, m: u32) -> Result<DenseMatrix> {
    require_square("mat_power", a)?;
    if m == 0 {
        return Err(LinalgError::InvalidOrder);
    }
    let mut out = a.clone();
    for _ in 1..m {
        out = a.matmul(&out)?;
    }
    Ok(out)
}

/// `u^T M v`.
pub fn weighted_inner(u: &[f64], v: &[f64], m: &DenseMatrix) -> Result<f64> {
    if u.len() != m.rows() {
        return Err(LinalgError::DimensionMismatch {
            op: "weighted_inner",
            expected: m.rows(),
            actual: u.len(),
        });
    }
    let mv = m.matvec(v)?;
    Ok(dot(u, &mv))
}
