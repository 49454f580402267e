//! Rectangular domains, subdomain covers, the piecewise-constant partition
//! of unity, fill distances and lawnmower trajectories.

use crate::scalar::{dist_sq, Points, Real};
use crate::{Error, Result};

/// Axis-aligned closed box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rect<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

/// Tolerance for lattice counts, relative to one grid step.
const LATTICE_SLACK: f64 = 1e-9;

impl<T: Real> Rect<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidArgument(format!("rect bounds of dims {} and {}", lo.len(), hi.len())));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("rect needs lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, axis: usize) -> T {
        self.hi[axis] - self.lo[axis]
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn contains_rect(&self, other: &Rect<T>) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    pub fn intersection(&self, other: &Rect<T>) -> Option<Rect<T>> {
        let lo: Vec<T> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<T> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        Rect::new(lo, hi).ok()
    }

    /// Uniform grid including both ends of every axis with spacing at most
    /// `resolution`.
    pub fn grid(&self, resolution: T) -> Points<T> {
        assert!(resolution > T::zero(), "grid resolution must be positive");
        let counts: Vec<usize> = (0..self.dim())
            .map(|k| {
                let cells = (self.extent(k) / resolution - T::lit(LATTICE_SLACK)).ceil();
                cells.to_usize().unwrap_or(0).max(1) + 1
            })
            .collect();
        self.grid_with_counts(&counts)
    }

    /// Uniform grid with `counts[k] >= 2` points per axis, ends included.
    pub fn grid_with_counts(&self, counts: &[usize]) -> Points<T> {
        let axes: Vec<Vec<T>> = (0..self.dim())
            .map(|k| {
                let n = counts[k].max(2);
                let step = self.extent(k) / T::lit((n - 1) as f64);
                (0..n)
                    .map(|j| if j == n - 1 { self.hi[k] } else { self.lo[k] + step * T::lit(j as f64) })
                    .collect()
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let mut pts = Points::with_capacity(self.dim(), total);
        let mut idx = vec![0usize; self.dim()];
        let mut p = vec![T::zero(); self.dim()];
        for _ in 0..total {
            for k in 0..self.dim() {
                p[k] = axes[k][idx[k]];
            }
            pts.push(&p);
            for k in 0..self.dim() {
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        pts
    }

    /// Lattice coordinates `lo + j * step` that stay inside the box.
    fn lattice_axis(&self, axis: usize, step: T) -> Vec<T> {
        let n = (self.extent(axis) / step + T::lit(LATTICE_SLACK)).floor().to_usize().unwrap_or(0);
        (0..=n).map(|j| self.lo[axis] + step * T::lit(j as f64)).map(|v| v.min(self.hi[axis])).collect()
    }

    pub fn convert<U: Real>(&self) -> Rect<U> {
        Rect {
            lo: self.lo.iter().map(|v| U::lit(v.as_f64())).collect(),
            hi: self.hi.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Points per axis of the dense validation grid used for cover and POU checks.
pub fn validation_points_per_axis(dim: usize) -> usize {
    match dim {
        1 => 40_000,
        2 => 200,
        3 => 40,
        _ => 8,
    }
}

/// Domain `omega` with subdomains whose union is `omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cover<T> {
    omega: Rect<T>,
    subdomains: Vec<Rect<T>>,
}

impl<T: Real> Cover<T> {
    pub fn new(omega: Rect<T>, subdomains: Vec<Rect<T>>) -> Result<Self> {
        if subdomains.is_empty() {
            return Err(Error::InvalidArgument("cover needs at least one subdomain".into()));
        }
        for (i, s) in subdomains.iter().enumerate() {
            if s.dim() != omega.dim() {
                return Err(Error::DimensionMismatch { expected: omega.dim(), got: s.dim() });
            }
            if !omega.contains_rect(s) {
                return Err(Error::InvalidArgument(format!("subdomain {} is not contained in omega", i + 1)));
            }
        }
        let cover = Self { omega, subdomains };
        let n = validation_points_per_axis(cover.dim());
        let grid = cover.omega.grid_with_counts(&vec![n; cover.dim()]);
        if let Some(p) = grid.iter().find(|p| cover.subdomains.iter().all(|s| !s.contains(p))) {
            return Err(Error::InvalidArgument(format!("subdomains do not cover omega at {p:?}")));
        }
        Ok(cover)
    }

    /// `2^d` orthant boxes of `omega`, each side pushed outward by
    /// `overlap` times the orthant width and clipped to `omega`. Agent `i`
    /// (zero based) takes the high half of axis `k` when bit `k` of `i` is set.
    pub fn orthants(omega: Rect<T>, overlap: T) -> Result<Self> {
        if !(overlap >= T::zero()) {
            return Err(Error::InvalidArgument("overlap must be >= 0".into()));
        }
        let d = omega.dim();
        let two = T::lit(2.0);
        let subdomains = (0..1usize << d)
            .map(|i| {
                let mut lo = Vec::with_capacity(d);
                let mut hi = Vec::with_capacity(d);
                for k in 0..d {
                    let half = omega.extent(k) / two;
                    let (l, h) = if (i >> k) & 1 == 0 {
                        (omega.lo[k], omega.lo[k] + half)
                    } else {
                        (omega.lo[k] + half, omega.hi[k])
                    };
                    lo.push((l - overlap * half).max(omega.lo[k]));
                    hi.push((h + overlap * half).min(omega.hi[k]));
                }
                Rect::new(lo, hi)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(omega, subdomains)
    }

    /// The trivial cover `{omega}`.
    pub fn single(omega: Rect<T>) -> Result<Self> {
        Self::new(omega.clone(), vec![omega])
    }

    pub fn omega(&self) -> &Rect<T> {
        &self.omega
    }

    pub fn subdomains(&self) -> &[Rect<T>] {
        &self.subdomains
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    /// Zero-based indices of the subdomains containing `x`.
    pub fn membership(&self, x: &[T]) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.subdomains[i].contains(x)).collect()
    }

    pub fn convert<U: Real>(&self) -> Cover<U> {
        Cover { omega: self.omega.convert(), subdomains: self.subdomains.iter().map(Rect::convert).collect() }
    }
}

/// One row of a user supplied weight table: the weights used wherever the
/// set of containing subdomains is exactly `members`.
#[derive(Clone, Debug, PartialEq)]
pub struct PouTableEntry<T> {
    pub members: Vec<usize>,
    pub weights: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PouKind<T> {
    /// `w_i = [x in Omega_i] / #{j : x in Omega_j}`.
    OverlapAverage,
    /// Weights looked up by membership pattern. Patterns missing from the
    /// table fall back to overlap averaging.
    CustomTable(Vec<PouTableEntry<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOfUnity<T> {
    cover: Cover<T>,
    kind: PouKind<T>,
}

/// Weights at a point; `inside` is false (and all weights zero) off `omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct PouWeights<T> {
    pub weights: Vec<T>,
    pub inside: bool,
}

impl<T: Real> PartitionOfUnity<T> {
    pub fn overlap_average(cover: Cover<T>) -> Self {
        Self { cover, kind: PouKind::OverlapAverage }
    }

    pub fn custom_table(cover: Cover<T>, mut table: Vec<PouTableEntry<T>>) -> Result<Self> {
        let n = cover.len();
        let tol = T::lit(1e-12);
        for e in &mut table {
            e.members.sort_unstable();
            e.members.dedup();
            if e.weights.len() != n || e.members.iter().any(|&m| m >= n) {
                return Err(Error::InvalidArgument(format!("POU table entry {:?} does not match {n} subdomains", e.members)));
            }
            let sum: T = e.weights.iter().copied().sum();
            let ok = (sum - T::one()).abs() <= tol
                && e.weights.iter().enumerate().all(|(i, w)| {
                    *w >= T::zero() && *w <= T::one() && (e.members.contains(&i) || *w == T::zero())
                });
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "POU table entry {:?} must have weights in [0,1], supported on its members, summing to 1",
                    e.members
                )));
            }
        }
        Ok(Self { cover, kind: PouKind::CustomTable(table) })
    }

    pub fn cover(&self) -> &Cover<T> {
        &self.cover
    }

    pub fn kind(&self) -> &PouKind<T> {
        &self.kind
    }

    pub fn weights(&self, x: &[T]) -> PouWeights<T> {
        let n = self.cover.len();
        let mut weights = vec![T::zero(); n];
        if !self.cover.omega.contains(x) {
            return PouWeights { weights, inside: false };
        }
        let members = self.cover.membership(x);
        if let PouKind::CustomTable(table) = &self.kind {
            if let Some(e) = table.iter().find(|e| e.members == members) {
                return PouWeights { weights: e.weights.clone(), inside: true };
            }
        }
        let w = T::one() / T::lit(members.len() as f64);
        for m in members {
            weights[m] = w;
        }
        PouWeights { weights, inside: true }
    }

    pub fn convert<U: Real>(&self) -> PartitionOfUnity<U> {
        let kind = match &self.kind {
            PouKind::OverlapAverage => PouKind::OverlapAverage,
            PouKind::CustomTable(t) => PouKind::CustomTable(
                t.iter()
                    .map(|e| PouTableEntry { members: e.members.clone(), weights: e.weights.iter().map(|w| U::lit(w.as_f64())).collect() })
                    .collect(),
            ),
        };
        PartitionOfUnity { cover: self.cover.convert(), kind }
    }
}

/// Free-function form of [`PartitionOfUnity::weights`].
pub fn pou_weights<T: Real>(pou: &PartitionOfUnity<T>, x: &[T]) -> PouWeights<T> {
    pou.weights(x)
}

/// Grid estimate of `sup_{x in A} min_{z in Z} |x - z|`.
///
/// The maximum is taken over a uniform grid of `a` with spacing at most
/// `resolution`, so the result is a lower bound on the true value, short by
/// at most [`fill_distance_grid_error`]. Empty `z` gives `+inf`.
pub fn fill_distance<T: Real>(z: &Points<T>, a: &Rect<T>, resolution: T) -> T {
    if z.is_empty() {
        return T::infinity();
    }
    let grid = a.grid(resolution);
    grid.iter()
        .map(|x| z.iter().map(|p| dist_sq(x, p)).fold(T::infinity(), T::min))
        .fold(T::zero(), T::max)
        .sqrt()
}

/// `resolution * sqrt(d) / 2`.
pub fn fill_distance_grid_error<T: Real>(resolution: T, dim: usize) -> T {
    resolution * T::lit(dim as f64).sqrt() / T::lit(2.0)
}

/// Boustrophedon sweep of the lattice `lo + j * resolution` inside `a`.
/// Axis 0 is the fast axis and reverses direction on every row.
pub fn lawnmower_path<T: Real>(a: &Rect<T>, resolution: T) -> Result<Points<T>> {
    if !(resolution > T::zero()) {
        return Err(Error::InvalidArgument("lawnmower resolution must be > 0".into()));
    }
    let axes: Vec<Vec<T>> = (0..a.dim()).map(|k| a.lattice_axis(k, resolution)).collect();
    let mut order: Vec<Vec<usize>> = (0..axes[0].len()).map(|j| vec![j]).collect();
    for axis in axes.iter().skip(1) {
        let mut next = Vec::with_capacity(order.len() * axis.len());
        for j in 0..axis.len() {
            let mut push = |idx: &Vec<usize>| {
                let mut v = idx.clone();
                v.push(j);
                next.push(v);
            };
            if j % 2 == 0 {
                order.iter().for_each(&mut push);
            } else {
                order.iter().rev().for_each(&mut push);
            }
        }
        order = next;
    }
    let mut pts = Points::with_capacity(a.dim(), order.len());
    for idx in order {
        let p: Vec<T> = idx.iter().enumerate().map(|(k, &j)| axes[k][j]).collect();
        pts.push(&p);
    }
    Ok(pts)
}

/// A waypoint sequence split into refinement stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub points: Points<T>,
    /// Exclusive end index of each stage in `points`.
    pub stage_ends: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn stage(&self, s: usize) -> std::ops::Range<usize> {
        let start = if s == 0 { 0 } else { self.stage_ends[s - 1] };
        start..self.stage_ends[s]
    }

    pub fn stages(&self) -> usize {
        self.stage_ends.len()
    }

    /// Mirror image through the center of `a` along each axis flagged in
    /// `axes`.
    pub fn reflected(&self, a: &Rect<T>, axes: &[bool]) -> Trajectory<T> {
        let mut points = Points::with_capacity(self.points.dim(), self.points.len());
        let mut buf = vec![T::zero(); self.points.dim()];
        for x in self.points.iter() {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if axes.get(k).copied().unwrap_or(false) {
                    (a.lo()[k] + a.hi()[k] - x[k]).max(a.lo()[k]).min(a.hi()[k])
                } else {
                    x[k]
                };
            }
            points.push(&buf);
        }
        Trajectory { points, stage_ends: self.stage_ends.clone() }
    }
}

/// Schedule of subdomain `a` of `omega`, mirrored along every axis on which
/// `a` sits in the upper half of `omega` so that each path starts at the
/// corner nearest the boundary of `omega`.
pub fn outward_schedule<T: Real>(omega: &Rect<T>, a: &Rect<T>, resolutions: &[T]) -> Result<Trajectory<T>> {
    let two = T::lit(2.0);
    let axes: Vec<bool> = (0..a.dim()).map(|k| a.lo()[k] + a.hi()[k] > omega.lo()[k] + omega.hi()[k] + T::epsilon() * two).collect();
    Ok(refine_schedule(a, resolutions)?.reflected(a, &axes))
}

/// Concatenated lawnmower paths at strictly decreasing resolutions.
pub fn refine_schedule<T: Real>(a: &Rect<T>, resolutions: &[T]) -> Result<Trajectory<T>> {
    if resolutions.is_empty() {
        return Err(Error::InvalidArgument("empty resolution schedule".into()));
    }
    if resolutions.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("resolution schedule must be strictly decreasing".into()));
    }
    let mut points = Points::new(a.dim());
    let mut stage_ends = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        points.extend(&lawnmower_path(a, r)?);
        stage_ends.push(points.len());
    }
    Ok(Trajectory { points, stage_ends })
}
