//! Finite kernel expansions `f = sum_l alpha_l K(xi_l, .)` and the RKHS
//! quantities computed on them: interpolation, norms and the power function.

use std::collections::HashMap;

use crate::kernel::{self, gram_entries, GramMatrix, KernelSpec};
use crate::linalg::{factor_with_jitter, Mat};
use crate::scalar::{dot, Points, Real};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelExpansion<T> {
    spec: KernelSpec<T>,
    centers: Points<T>,
    coefficients: Vec<T>,
}

/// Key for exact coordinate equality.
fn point_key<T: Real>(p: &[T]) -> Vec<u64> {
    // +0.0 and -0.0 are the same center.
    p.iter().map(|v| if *v == T::zero() { 0 } else { v.as_f64().to_bits() }).collect()
}

pub(crate) fn check_distinct<T: Real>(z: &Points<T>) -> Result<()> {
    let mut seen = HashMap::with_capacity(z.len());
    for (i, p) in z.iter().enumerate() {
        if seen.insert(point_key(p), i).is_some() {
            return Err(Error::DuplicateCenter { index: i });
        }
    }
    Ok(())
}

impl<T: Real> KernelExpansion<T> {
    pub fn new(spec: KernelSpec<T>, centers: Points<T>, coefficients: Vec<T>) -> Result<Self> {
        spec.check_points(&centers)?;
        if centers.len() != coefficients.len() {
            return Err(Error::DimensionMismatch { expected: centers.len(), got: coefficients.len() });
        }
        check_distinct(&centers)?;
        Ok(Self { spec, centers, coefficients })
    }

    /// Caller guarantees matching lengths and distinct, finite centers.
    pub(crate) fn from_parts_unchecked(spec: KernelSpec<T>, centers: Points<T>, coefficients: Vec<T>) -> Self {
        debug_assert_eq!(centers.len(), coefficients.len());
        Self { spec, centers, coefficients }
    }

    /// The zero function.
    pub fn zero(spec: KernelSpec<T>) -> Self {
        Self { spec, centers: Points::new(spec.dim()), coefficients: Vec::new() }
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    pub fn centers(&self) -> &Points<T> {
        &self.centers
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coefficients
    }

    pub(crate) fn coefficients_mut(&mut self) -> &mut [T] {
        &mut self.coefficients
    }

    pub(crate) fn push_center(&mut self, x: &[T], coefficient: T) {
        self.centers.push(x);
        self.coefficients.push(coefficient);
    }

    pub(crate) fn set_coefficients(&mut self, alpha: Vec<T>) {
        assert_eq!(alpha.len(), self.centers.len());
        self.coefficients = alpha;
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn evaluate(&self, x: &[T]) -> Result<T> {
        self.spec.check_point(x)?;
        Ok(self.evaluate_unchecked(x))
    }

    #[inline]
    pub fn evaluate_unchecked(&self, x: &[T]) -> T {
        self.centers
            .iter()
            .zip(&self.coefficients)
            .map(|(c, a)| *a * self.spec.eval_unchecked(c, x))
            .sum()
    }

    pub fn gram(&self) -> Mat<T> {
        gram_entries(&self.spec, &self.centers, &self.centers)
    }

    pub fn convert<U: Real>(&self) -> KernelExpansion<U> {
        KernelExpansion {
            spec: self.spec.convert(),
            centers: self.centers.convert(),
            coefficients: self.coefficients.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Coefficients `alpha = K(Z, Z)^{-1} values` of the kernel interpolant.
pub fn interpolation_coefficients<T: Real>(spec: &KernelSpec<T>, z: &Points<T>, values: &[T]) -> Result<Vec<T>> {
    spec.check_points(z)?;
    if values.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), got: values.len() });
    }
    check_distinct(z)?;
    if z.is_empty() {
        return Ok(Vec::new());
    }
    let g = GramMatrix { entries: gram_entries(spec, z, z), row_centers: z.clone(), col_centers: z.clone() };
    let sol = kernel::solve_spd(&g, &Mat::column(values), spec.default_jitter())?;
    Ok(sol.x.into_vec())
}

pub fn interpolate<T: Real>(spec: &KernelSpec<T>, z: &Points<T>, values: &[T]) -> Result<KernelExpansion<T>> {
    let alpha = interpolation_coefficients(spec, z, values)?;
    Ok(KernelExpansion::from_parts_unchecked(*spec, z.clone(), alpha))
}

/// Squared power function `K(x,x) - k(x,Z) K(Z,Z)^{-1} k(Z,x)`: the squared
/// RKHS distance from `K(x, .)` to the span of the kernel sections on `Z`.
pub fn power_function_sq<T: Real>(spec: &KernelSpec<T>, z: &Points<T>, x: &[T]) -> Result<T> {
    spec.check_points(z)?;
    spec.check_point(x)?;
    check_distinct(z)?;
    let kxx = spec.variance();
    if z.is_empty() {
        return Ok(kxx);
    }
    let g = gram_entries(spec, z, z);
    let (chol, _) = factor_with_jitter(&g, spec.default_jitter()).map_err(|e| match e {
        Error::SingularGram { n, max_jitter, .. } => {
            Error::SingularGram { n, max_jitter, centers: String::from(" (power function)") }
        }
        other => other,
    })?;
    let mut l = spec.column(z, x);
    chol.forward(&mut l);
    Ok(power_from_reduced(kxx, dot(&l, &l), z.len()))
}

/// `K(x,x) - |l|^2` for the forward-reduced column `l = L^{-1} k(Z, x)`.
/// Differences inside the cancellation error of the subtraction are
/// reported as exactly zero.
pub(crate) fn power_from_reduced<T: Real>(variance: T, reduced_sq: T, n: usize) -> T {
    let p2 = variance - reduced_sq;
    let floor = T::epsilon() * variance * T::lit((n + 1) as f64);
    if p2 <= floor {
        T::zero()
    } else {
        p2.min(variance)
    }
}

/// Clamps a quadratic form that must be non-negative. Negative values inside
/// the roundoff envelope become zero; anything below it is an error.
pub(crate) fn clamp_quadratic<T: Real>(value: T, variance: T, magnitude: T) -> Result<T> {
    if value >= T::zero() {
        return Ok(value);
    }
    let envelope = (T::lit(1e-10) * variance).max(T::lit(64.0) * T::epsilon() * magnitude);
    if value >= -envelope {
        Ok(T::zero())
    } else {
        Err(Error::InternalConsistency(format!(
            "quadratic form {:e} is negative beyond roundoff envelope {:e}",
            value.as_f64(),
            envelope.as_f64()
        )))
    }
}

/// `alpha^T K(Xi, Xi) alpha`, the squared RKHS norm of the expansion.
pub fn rkhs_norm_sq<T: Real>(f: &KernelExpansion<T>) -> Result<T> {
    if f.is_empty() {
        return Ok(T::zero());
    }
    let g = f.gram();
    let a = f.coefficients();
    let value = g.quad_form(a);
    let abs_a: Vec<T> = a.iter().map(|v| v.abs()).collect();
    let magnitude = dot(&abs_a, &Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)].abs()).matvec(&abs_a));
    clamp_quadratic(value, f.spec().variance(), magnitude)
}

/// `f - g` as one expansion on the union of both center sets; coinciding
/// centers are merged.
pub fn expansion_difference<T: Real>(f: &KernelExpansion<T>, g: &KernelExpansion<T>) -> Result<KernelExpansion<T>> {
    if f.spec() != g.spec() {
        return Err(Error::SpecMismatch);
    }
    let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(f.len() + g.len());
    let mut centers = Points::with_capacity(f.spec().dim(), f.len() + g.len());
    let mut coeffs = Vec::with_capacity(f.len() + g.len());
    for (sign, e) in [(T::one(), f), (-T::one(), g)] {
        for (c, a) in e.centers().iter().zip(e.coefficients()) {
            match index.get(&point_key(c)) {
                Some(&i) => coeffs[i] += sign * *a,
                None => {
                    index.insert(point_key(c), coeffs.len());
                    centers.push(c);
                    coeffs.push(sign * *a);
                }
            }
        }
    }
    Ok(KernelExpansion::from_parts_unchecked(*f.spec(), centers, coeffs))
}

/// `||f - g||^2` in the RKHS, exact on the union of the center sets.
pub fn expansion_difference_norm_sq<T: Real>(f: &KernelExpansion<T>, g: &KernelExpansion<T>) -> Result<T> {
    rkhs_norm_sq(&expansion_difference(f, g)?)
}
