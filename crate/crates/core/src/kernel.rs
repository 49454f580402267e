//! Radial kernels, Gram matrices and jittered SPD solves over them.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat, SpdSolution};
use crate::scalar::{dist_sq, Points, Real};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Matérn with smoothness 5/2.
    Matern52,
    /// Squared exponential.
    Gaussian,
    /// Wendland's compactly supported C² function, support radius `ell`.
    WendlandC2,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::WendlandC2 => "wendland_c2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matern52" => Some(KernelFamily::Matern52),
            "gaussian" => Some(KernelFamily::Gaussian),
            "wendland_c2" => Some(KernelFamily::WendlandC2),
            _ => None,
        }
    }
}

/// Kernel family with output scale `sigma`, length scale `ell`, on `R^dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec<T> {
    family: KernelFamily,
    sigma: T,
    ell: T,
    dim: usize,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(family: KernelFamily, sigma: T, ell: T, dim: usize) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        if !(ell > T::zero() && ell.is_finite()) {
            return Err(Error::InvalidArgument(format!("ell must be > 0, got {ell}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be >= 1".into()));
        }
        Ok(Self { family, sigma, ell, dim })
    }

    pub fn matern52(sigma: T, ell: T, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Matern52, sigma, ell, dim)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn ell(&self) -> T {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K(x, x) = sigma^2`, the uniform diagonal bound.
    pub fn variance(&self) -> T {
        self.sigma * self.sigma
    }

    /// Hyperparameters `[sigma, ell]` scaled by `c`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.family, self.sigma * c, self.ell * c, self.dim)
    }

    /// Default starting jitter for SPD solves, `1e-12 sigma^2`.
    pub fn default_jitter(&self) -> T {
        T::lit(1e-12) * self.variance()
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn radial_sq(&self, r2: T) -> T {
        let s2 = self.variance();
        match self.family {
            KernelFamily::Matern52 => {
                let u = T::lit(5.0f64.sqrt()) * r2.sqrt() / self.ell;
                s2 * (T::one() + u + u * u / T::lit(3.0)) * (-u).exp()
            }
            KernelFamily::Gaussian => s2 * (-r2 / (T::lit(2.0) * self.ell * self.ell)).exp(),
            KernelFamily::WendlandC2 => {
                let rho = r2.sqrt() / self.ell;
                if rho >= T::one() {
                    T::zero()
                } else {
                    let t = T::one() - rho;
                    let t2 = t * t;
                    s2 * t2 * t2 * (T::lit(4.0) * rho + T::one())
                }
            }
        }
    }

    #[inline]
    pub fn radial(&self, r: T) -> T {
        self.radial_sq(r * r)
    }

    /// Kernel value without dimension or finiteness checks.
    #[inline]
    pub fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        self.radial_sq(dist_sq(x, y))
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub fn check_points(&self, z: &Points<T>) -> Result<()> {
        if z.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z.dim() });
        }
        if z.as_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// The column `[K(z_1, x), ..., K(z_n, x)]`.
    pub fn column(&self, z: &Points<T>, x: &[T]) -> Vec<T> {
        z.iter().map(|zi| self.eval_unchecked(zi, x)).collect()
    }

    pub fn convert<U: Real>(&self) -> KernelSpec<U> {
        KernelSpec { family: self.family, sigma: U::lit(self.sigma.as_f64()), ell: U::lit(self.ell.as_f64()), dim: self.dim }
    }
}

/// Kernel matrix `[K(row_i, col_j)]`.
#[derive(Clone, Debug)]
pub struct GramMatrix<T> {
    pub entries: Mat<T>,
    pub row_centers: Points<T>,
    pub col_centers: Points<T>,
}

impl<T: Real> GramMatrix<T> {
    pub fn is_square(&self) -> bool {
        self.entries.is_square()
    }
}

pub fn gram<T: Real>(spec: &KernelSpec<T>, z1: &Points<T>, z2: &Points<T>) -> Result<GramMatrix<T>> {
    spec.check_points(z1)?;
    spec.check_points(z2)?;
    Ok(GramMatrix {
        entries: gram_entries(spec, z1, z2),
        row_centers: z1.clone(),
        col_centers: z2.clone(),
    })
}

/// Unchecked square Gram entries, exploiting symmetry when `z1 == z2`.
pub(crate) fn gram_entries<T: Real>(spec: &KernelSpec<T>, z1: &Points<T>, z2: &Points<T>) -> Mat<T> {
    if std::ptr::eq(z1, z2) {
        let n = z1.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = spec.eval_unchecked(z1.get(i), z1.get(j));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    } else {
        Mat::from_fn(z1.len(), z2.len(), |i, j| spec.eval_unchecked(z1.get(i), z2.get(j)))
    }
}

fn describe_centers<T: Real>(z: &Points<T>) -> String {
    const SHOWN: usize = 4;
    let mut s: Vec<String> = z
        .iter()
        .take(SHOWN)
        .map(|p| format!("({})", p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", ")))
        .collect();
    if z.len() > SHOWN {
        s.push(format!("... {} more", z.len() - SHOWN));
    }
    format!(": {}", s.join(" "))
}

/// Solves `(G + j I) X = B`; see [`linalg::solve_spd`] for the jitter ladder.
pub fn solve_spd<T: Real>(g: &GramMatrix<T>, b: &Mat<T>, jitter0: T) -> Result<SpdSolution<T>> {
    linalg::solve_spd(&g.entries, b, jitter0).map_err(|e| match e {
        Error::SingularGram { n, max_jitter, .. } => {
            Error::SingularGram { n, max_jitter, centers: describe_centers(&g.row_centers) }
        }
        other => other,
    })
}
