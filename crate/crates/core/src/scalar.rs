//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the estimators are generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every `f64` maps to some value of `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A list of points in `R^dim`, stored contiguously.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Points<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Points<T> {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "points need at least one coordinate");
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        assert!(dim >= 1, "points need at least one coordinate");
        Self { dim, data: Vec::with_capacity(dim * n) }
    }

    /// Builds from a flat coordinate buffer of length `n * dim`.
    pub fn from_flat(dim: usize, data: Vec<T>) -> crate::Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(crate::Error::InvalidArgument(format!(
                "flat buffer of length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(dim: usize, rows: impl IntoIterator<Item = R>) -> crate::Result<Self> {
        let mut pts = Self::new(dim);
        for r in rows {
            pts.try_push(r.as_ref())?;
        }
        Ok(pts)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn try_push(&mut self, p: &[T]) -> crate::Result<()> {
        if p.len() != self.dim {
            return Err(crate::Error::DimensionMismatch { expected: self.dim, got: p.len() });
        }
        self.data.extend_from_slice(p);
        Ok(())
    }

    /// Panics on dimension mismatch.
    pub fn push(&mut self, p: &[T]) {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        self.data.extend_from_slice(p);
    }

    pub fn extend(&mut self, other: &Points<T>) {
        assert_eq!(other.dim, self.dim, "point dimension mismatch");
        self.data.extend_from_slice(&other.data);
    }

    /// Returns the first `n` points.
    pub fn prefix(&self, n: usize) -> Points<T> {
        Points { dim: self.dim, data: self.data[..n * self.dim].to_vec() }
    }

    pub fn convert<U: Real>(&self) -> Points<U> {
        Points { dim: self.dim, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

#[inline]
pub(crate) fn dist_sq<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(a, b)| (*a - *b) * (*a - *b)).sum()
}

#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(a, b)| *a * *b).sum()
}
