//! Dense linear algebra on small symmetric systems: a row-major matrix, a
//! growable Cholesky factor, jittered SPD solves and Jacobi eigenvalues.

use std::ops::{Index, IndexMut};

use crate::scalar::{dot, Real};
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
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

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    /// Single-column matrix.
    pub fn column(v: &[T]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `v^T A v`.
    pub fn quad_form(&self, v: &[T]) -> T {
        dot(v, &self.matvec(v))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `G = L L^T`, stored packed by rows so
/// that a new center can be appended in O(n^2).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cholesky<T> {
    n: usize,
    packed: Vec<T>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl<T: Real> Cholesky<T> {
    pub fn empty() -> Self {
        Self { n: 0, packed: Vec::new() }
    }

    /// Factors `g + shift * I`. Returns `None` when a pivot is not strictly
    /// positive and finite.
    pub fn factor_shifted(g: &Mat<T>, shift: T) -> Option<Self> {
        assert!(g.is_square(), "Cholesky of non-square matrix");
        let n = g.rows();
        let mut chol = Self { n: 0, packed: Vec::with_capacity(row_start(n)) };
        let mut row = vec![T::zero(); n];
        for i in 0..n {
            row[..i].copy_from_slice(&g.row(i)[..i]);
            if chol.append(&row[..i], g[(i, i)] + shift).is_err() {
                return None;
            }
        }
        Some(chol)
    }

    pub fn factor(g: &Mat<T>) -> Option<Self> {
        Self::factor_shifted(g, T::zero())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn l_row(&self, i: usize) -> &[T] {
        &self.packed[row_start(i)..row_start(i) + i + 1]
    }

    pub fn diag(&self, i: usize) -> T {
        self.packed[row_start(i) + i]
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let r = self.l_row(i);
            let s = dot(&r[..i], &b[..i]);
            b[i] = (b[i] - s) / r[i];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward(&self, y: &mut [T]) {
        assert_eq!(y.len(), self.n);
        for i in (0..self.n).rev() {
            let xi = y[i] / self.diag(i);
            y[i] = xi;
            let r = self.l_row(i);
            for (k, lk) in r[..i].iter().enumerate() {
                y[k] -= *lk * xi;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        self.forward(b);
        self.backward(b);
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_mat(&self, b: &Mat<T>) -> Mat<T> {
        assert_eq!(b.rows(), self.n);
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.col(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Extends the factor by one row/column of the factored matrix.
    ///
    /// `cross` holds the new off-diagonal entries `G[n][0..n]`, `self_entry`
    /// the new diagonal `G[n][n]`. Returns the squared new pivot, which is the
    /// Schur complement `G[n][n] - c^T G^{-1} c`.
    pub fn append(&mut self, cross: &[T], self_entry: T) -> Result<T> {
        let mut l = cross.to_vec();
        self.forward(&mut l);
        let schur = self_entry - dot(&l, &l);
        self.append_solved(l, schur)?;
        Ok(schur)
    }

    /// Appends a row already reduced by `forward`, with its Schur complement.
    pub fn append_solved(&mut self, mut l: Vec<T>, schur: T) -> Result<()> {
        assert_eq!(l.len(), self.n);
        if !(schur > T::zero()) || !schur.is_finite() {
            return Err(Error::InternalConsistency(format!(
                "non-positive Cholesky pivot {:e} at row {}",
                schur.as_f64(),
                self.n
            )));
        }
        l.push(schur.sqrt());
        self.packed.extend_from_slice(&l);
        self.n += 1;
        Ok(())
    }

    /// Reconstructs `L` as a dense matrix.
    pub fn lower(&self) -> Mat<T> {
        Mat::from_fn(self.n, self.n, |i, j| if j <= i { self.l_row(i)[j] } else { T::zero() })
    }

    /// Smallest pivot; `min_i L_ii^2` lower-bounds nothing in general but is
    /// a cheap conditioning indicator.
    pub fn min_pivot(&self) -> T {
        (0..self.n).map(|i| self.diag(i)).fold(T::infinity(), T::min)
    }
}

/// Result of a jittered symmetric positive-definite solve.
#[derive(Clone, Debug)]
pub struct SpdSolution<T> {
    pub x: Mat<T>,
    /// Diagonal shift that was actually added to `G`.
    pub jitter: T,
}

/// Number of escalation steps after the first non-zero jitter.
pub const JITTER_ESCALATIONS: usize = 8;

/// Factors `g + j I` for `j` in `0, jitter0, 10 jitter0, ...` and returns
/// the first factor that succeeds together with the shift used.
pub fn factor_with_jitter<T: Real>(g: &Mat<T>, jitter0: T) -> Result<(Cholesky<T>, T)> {
    if !g.is_square() {
        return Err(Error::InvalidArgument(format!("Gram matrix is {}x{}", g.rows(), g.cols())));
    }
    if let Some(c) = Cholesky::factor(g) {
        return Ok((c, T::zero()));
    }
    let mut j = jitter0;
    let mut tried = T::zero();
    if jitter0 > T::zero() {
        for _ in 0..JITTER_ESCALATIONS {
            tried = j;
            if let Some(c) = Cholesky::factor_shifted(g, j) {
                log::warn!("Gram factorization of size {} needed jitter {:e}", g.rows(), j.as_f64());
                return Ok((c, j));
            }
            j *= T::lit(10.0);
        }
    }
    Err(Error::SingularGram { n: g.rows(), max_jitter: tried.as_f64(), centers: String::new() })
}

/// Solves `(G + j I) X = B` with the smallest admissible jitter `j`.
pub fn solve_spd<T: Real>(g: &Mat<T>, b: &Mat<T>, jitter0: T) -> Result<SpdSolution<T>> {
    if b.rows() != g.rows() {
        return Err(Error::DimensionMismatch { expected: g.rows(), got: b.rows() });
    }
    let (chol, jitter) = factor_with_jitter(g, jitter0)?;
    Ok(SpdSolution { x: chol.solve_mat(b), jitter })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Real>(a: &Mat<T>) -> Vec<T> {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        let diag: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}
