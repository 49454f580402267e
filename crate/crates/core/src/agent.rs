//! One agent's online estimator: multistep coefficient updates, novelty
//! gated basis growth and interpolation resets, driven by its own samples.

use std::collections::VecDeque;

use rand_chacha::ChaCha20Rng;

use crate::field::{sample_field, stream_rng};
use crate::geometry::{Rect, Trajectory};
use crate::kernel::{gram_entries, KernelSpec};
use crate::linalg::{factor_with_jitter, Cholesky};
use crate::rkhs::{check_distinct, power_from_reduced, KernelExpansion};
use crate::scalar::{dot, Points, Real};
use crate::{Error, Result};

/// Explicit Adams–Bashforth weights, most recent sample first.
pub fn adams_bashforth(order: usize) -> Vec<f64> {
    match order {
        1 => vec![1.0],
        2 => vec![1.5, -0.5],
        3 => vec![23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
        4 => vec![55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
        _ => panic!("Adams-Bashforth weights only tabulated for orders 1..=4"),
    }
}

/// Growth factor of `|alpha|_inf` over `max |samples| + 1` that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct StepperConfig<T> {
    /// Learning rate.
    pub gamma: T,
    /// Time step.
    pub h: T,
    /// Multistep weights `a_1..a_q`, most recent first; `q = a.len()`.
    pub a: Vec<T>,
    /// Multiply the update by `K(Xi, Xi)^{-1}`, i.e. project onto the span.
    pub preconditioned: bool,
    /// Novelty threshold for admitting a new center.
    pub epsilon_bar: T,
}

impl<T: Real> StepperConfig<T> {
    /// Adams–Bashforth stepper of order `q`.
    pub fn adams_bashforth(q: usize, gamma: T, h: T, epsilon_bar: T) -> Self {
        Self {
            gamma,
            h,
            a: adams_bashforth(q).into_iter().map(T::lit).collect(),
            preconditioned: true,
            epsilon_bar,
        }
    }

    pub fn euler(gamma: T, h: T, epsilon_bar: T) -> Self {
        Self::adams_bashforth(1, gamma, h, epsilon_bar)
    }

    pub fn order(&self) -> usize {
        self.a.len()
    }

    /// Collects every violated constraint. An inconsistent weight sum only warns.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.gamma > T::zero()) {
            issues.push("stepper.gamma must be > 0".into());
        }
        if !(self.h > T::zero()) {
            issues.push("stepper.h must be > 0".into());
        }
        if self.a.is_empty() {
            issues.push("stepper.a must hold at least one weight".into());
        }
        if !(self.epsilon_bar > T::zero()) {
            issues.push("stepper.epsilon_bar must be > 0".into());
        }
        let sum: T = self.a.iter().copied().sum();
        if !self.a.is_empty() && (sum - T::one()).abs() > T::lit(1e-9) {
            log::warn!("multistep weights sum to {sum}, not 1; the method is not consistent");
        }
        issues
    }

    /// Weights for a window holding `available` samples: the configured
    /// weights once the window is full, lower-order Adams–Bashforth before.
    fn weights_for(&self, available: usize) -> Vec<T> {
        if available >= self.order() {
            self.a.clone()
        } else {
            adams_bashforth(available).into_iter().map(T::lit).collect()
        }
    }
}

/// Past sample with its residual frozen at the step it was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry<T> {
    pub x: Vec<T>,
    pub y: T,
    pub residual: T,
}

/// Per-step record for the agent log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog<T> {
    pub step: usize,
    pub agent: usize,
    pub x: Vec<T>,
    pub basis_count: usize,
    pub novelty: T,
    pub residual: T,
    pub enriched: bool,
    /// `max_l |g_hat(xi_l) - g_l|` right after an enrichment.
    pub reset_error: Option<T>,
}

#[derive(Clone, Debug)]
pub struct AgentState<T> {
    id: usize,
    subdomain: Rect<T>,
    estimate: KernelExpansion<T>,
    samples: Vec<T>,
    chol: Cholesky<T>,
    trajectory: Trajectory<T>,
    cursor: usize,
    history: VecDeque<HistoryEntry<T>>,
    noise_std: T,
    rng: ChaCha20Rng,
    position: Option<Vec<T>>,
}

impl<T: Real> AgentState<T> {
    /// Agent `id` (1-based) with an empty basis. Noise draws use stream `id`
    /// of `seed`.
    pub fn new(id: usize, subdomain: Rect<T>, spec: KernelSpec<T>, trajectory: Trajectory<T>, noise_std: T, seed: u64) -> Result<Self> {
        if id == 0 {
            return Err(Error::InvalidArgument("agent ids start at 1".into()));
        }
        if subdomain.dim() != spec.dim() || trajectory.points.dim() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), got: subdomain.dim() });
        }
        if let Some(p) = trajectory.points.iter().find(|p| !subdomain.contains(p)) {
            return Err(Error::InvalidArgument(format!("agent {id} trajectory leaves its subdomain at {p:?}")));
        }
        Ok(Self {
            id,
            subdomain,
            estimate: KernelExpansion::zero(spec),
            samples: Vec::new(),
            chol: Cholesky::empty(),
            trajectory,
            cursor: 0,
            history: VecDeque::new(),
            noise_std,
            rng: stream_rng(seed, id as u64),
            position: None,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn subdomain(&self) -> &Rect<T> {
        &self.subdomain
    }

    pub fn estimate(&self) -> &KernelExpansion<T> {
        &self.estimate
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        self.estimate.spec()
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn basis_count(&self) -> usize {
        self.estimate.len()
    }

    pub fn trajectory(&self) -> &Trajectory<T> {
        &self.trajectory
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn exhausted(&self) -> bool {
        self.cursor >= self.trajectory.points.len()
    }

    /// Most recent sampling location.
    pub fn position(&self) -> Option<&[T]> {
        self.position.as_deref()
    }

    pub fn history(&self) -> impl Iterator<Item = &HistoryEntry<T>> {
        self.history.iter()
    }

    /// Replaces the basis with `centers`, stores `values` as their samples
    /// and sets the coefficients to the interpolant.
    pub fn seed_basis(&mut self, centers: Points<T>, values: Vec<T>) -> Result<()> {
        self.spec().check_points(&centers)?;
        if centers.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: centers.len(), got: values.len() });
        }
        check_distinct(&centers)?;
        let spec = *self.spec();
        let g = gram_entries(&spec, &centers, &centers);
        let (chol, jitter) = factor_with_jitter(&g, spec.default_jitter())?;
        if jitter > T::zero() {
            log::warn!("agent {}: initial basis needed jitter {:e}", self.id, jitter.as_f64());
        }
        let alpha = chol.solve(&values);
        self.estimate = KernelExpansion::from_parts_unchecked(spec, centers, alpha);
        self.samples = values;
        self.chol = chol;
        Ok(())
    }

    /// Overwrites the coefficients, keeping the basis.
    pub fn set_coefficients(&mut self, alpha: Vec<T>) -> Result<()> {
        if alpha.len() != self.basis_count() {
            return Err(Error::DimensionMismatch { expected: self.basis_count(), got: alpha.len() });
        }
        self.estimate.set_coefficients(alpha);
        Ok(())
    }

    /// One multistep update from the sample `(x, y)`, which enters the
    /// history window first. Returns the residual at `x`.
    pub fn coefficient_step(&mut self, x: &[T], y: T, cfg: &StepperConfig<T>) -> Result<T> {
        self.spec().check_point(x)?;
        let residual = y - self.estimate.evaluate_unchecked(x);
        self.history.push_front(HistoryEntry { x: x.to_vec(), y, residual });
        self.history.truncate(cfg.order());
        if self.estimate.is_empty() {
            return Ok(residual);
        }
        let weights = cfg.weights_for(self.history.len());
        let spec = *self.spec();
        let mut direction = vec![T::zero(); self.basis_count()];
        for (entry, a) in self.history.iter().zip(&weights) {
            let scale = *a * entry.residual;
            if scale == T::zero() {
                continue;
            }
            for (d, c) in direction.iter_mut().zip(self.estimate.centers().iter()) {
                *d += scale * spec.eval_unchecked(c, &entry.x);
            }
        }
        if cfg.preconditioned {
            self.chol.solve_in_place(&mut direction);
        }
        let step = cfg.h * cfg.gamma;
        for (alpha, d) in self.estimate.coefficients_mut().iter_mut().zip(&direction) {
            *alpha += step * *d;
        }
        self.check_divergence(cfg)?;
        Ok(residual)
    }

    fn check_divergence(&self, cfg: &StepperConfig<T>) -> Result<()> {
        let norm = self.estimate.coefficients().iter().fold(T::zero(), |m, a| m.max(a.abs()));
        let scale = self.samples.iter().fold(T::zero(), |m, g| m.max(g.abs())) + T::one();
        let limit = T::lit(DIVERGENCE_FACTOR) * scale;
        if !(norm <= limit) {
            return Err(Error::Divergence {
                agent: self.id,
                step: self.cursor,
                norm: norm.as_f64(),
                limit: limit.as_f64(),
                h_gamma: (cfg.h * cfg.gamma).as_f64(),
            });
        }
        Ok(())
    }

    /// Novelty and the forward-reduced kernel column `L^{-1} k(Xi, x)`.
    fn novelty_row(&self, x: &[T]) -> (T, Vec<T>) {
        let spec = self.spec();
        let mut l = spec.column(self.estimate.centers(), x);
        self.chol.forward(&mut l);
        let p2 = power_from_reduced(spec.variance(), dot(&l, &l), self.basis_count());
        (p2.sqrt(), l)
    }

    /// RKHS distance from `K(x, .)` to the span of the current basis.
    pub fn novelty(&self, x: &[T]) -> Result<T> {
        self.spec().check_point(x)?;
        Ok(self.novelty_row(x).0)
    }

    /// Admits `x` as a center with sample `y` and resets the coefficients to
    /// interpolate every stored sample. Fails unless `novelty(x) > epsilon_bar`.
    pub fn enrich(&mut self, x: &[T], y: T, cfg: &StepperConfig<T>) -> Result<()> {
        self.spec().check_point(x)?;
        let (eps, row) = self.novelty_row(x);
        self.enrich_with_row(x, y, eps, row, cfg)
    }

    fn enrich_with_row(&mut self, x: &[T], y: T, eps: T, row: Vec<T>, cfg: &StepperConfig<T>) -> Result<()> {
        if !(eps > cfg.epsilon_bar) {
            return Err(Error::NotNovel { novelty: eps.as_f64(), threshold: cfg.epsilon_bar.as_f64() });
        }
        self.chol.append_solved(row, eps * eps)?;
        self.estimate.push_center(x, T::zero());
        self.samples.push(y);
        let alpha = self.chol.solve(&self.samples);
        self.estimate.set_coefficients(alpha);
        Ok(())
    }

    /// `max_l |g_hat(xi_l) - g_l|`.
    pub fn interpolation_error(&self) -> T {
        self.estimate
            .centers()
            .iter()
            .zip(&self.samples)
            .map(|(c, g)| (self.estimate.evaluate_unchecked(c) - *g).abs())
            .fold(T::zero(), T::max)
    }

    fn next_sample(&mut self, field: &KernelExpansion<T>) -> Result<(Vec<T>, T)> {
        if self.exhausted() {
            return Err(Error::TrajectoryExhausted(self.id));
        }
        let x = self.trajectory.points.get(self.cursor).to_vec();
        self.cursor += 1;
        let y = sample_field(field, &x, self.noise_std, &mut self.rng);
        self.position = Some(x.clone());
        Ok((x, y))
    }

    /// Seeds the basis with the first `n` waypoints and their samples.
    pub fn initialize(&mut self, field: &KernelExpansion<T>, n: usize) -> Result<()> {
        let mut centers = Points::new(self.spec().dim());
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, y) = self.next_sample(field)?;
            if centers.iter().any(|c| c == x.as_slice()) {
                continue;
            }
            centers.push(&x);
            values.push(y);
        }
        self.seed_basis(centers, values)
    }

    /// Takes the next waypoint: sample, coefficient update, novelty test and
    /// enrichment when the sample is novel.
    pub fn agent_update(&mut self, cfg: &StepperConfig<T>, field: &KernelExpansion<T>, step: usize) -> Result<StepLog<T>> {
        let (x, y) = self.next_sample(field)?;
        let residual = self.coefficient_step(&x, y, cfg)?;
        let (eps, row) = self.novelty_row(&x);
        let enriched = eps > cfg.epsilon_bar;
        let mut reset_error = None;
        if enriched {
            self.enrich_with_row(&x, y, eps, row, cfg)?;
            reset_error = Some(self.interpolation_error());
        }
        Ok(StepLog { step, agent: self.id, x, basis_count: self.basis_count(), novelty: eps, residual, enriched, reset_error })
    }

    /// Number of centers [`AgentState::dry_run_admitted`] admits.
    pub fn dry_run_centers(spec: &KernelSpec<T>, trajectory: &Points<T>, epsilon_bar: T) -> Result<usize> {
        Ok(Self::dry_run_admitted(spec, trajectory, epsilon_bar)?.len())
    }

    /// Geometry-only replay: admits centers along the trajectory as
    /// `agent_update` would, without sampling or coefficient updates.
    pub fn dry_run_admitted(spec: &KernelSpec<T>, trajectory: &Points<T>, epsilon_bar: T) -> Result<Points<T>> {
        let mut centers = Points::new(spec.dim());
        let mut chol = Cholesky::empty();
        for x in trajectory.iter() {
            let mut l = spec.column(&centers, x);
            chol.forward(&mut l);
            let p2 = power_from_reduced(spec.variance(), dot(&l, &l), centers.len());
            let first = centers.is_empty();
            if first || p2.sqrt() > epsilon_bar {
                chol.append_solved(l, p2)?;
                centers.push(x);
            }
        }
        Ok(centers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fill_distance, refine_schedule};
    use crate::kernel::KernelFamily;
    use crate::linalg::symmetric_eigenvalues;
    use crate::rkhs::power_function_sq;
    use approx::assert_relative_eq;

    fn spec() -> KernelSpec<f64> {
        KernelSpec::matern52(1.0, 1.0, 2).unwrap()
    }

    fn square(side: f64) -> Rect<f64> {
        Rect::new(vec![0.0, 0.0], vec![side, side]).unwrap()
    }

    fn agent(side: f64, resolutions: &[f64]) -> AgentState<f64> {
        let r = square(side);
        let t = refine_schedule(&r, resolutions).unwrap();
        AgentState::new(1, r, spec(), t, 0.0, 0).unwrap()
    }

    fn one_center() -> AgentState<f64> {
        let mut a = agent(1.0, &[1.0]);
        a.seed_basis(Points::from_rows(2, [[0.5, 0.5]]).unwrap(), vec![0.0]).unwrap();
        a
    }

    #[test]
    fn euler_step_single_center() {
        for pre in [true, false] {
            let mut a = one_center();
            let mut cfg = StepperConfig::euler(1.0, 0.1, 0.01);
            cfg.preconditioned = pre;
            let e = a.coefficient_step(&[0.5, 0.5], 1.0, &cfg).unwrap();
            assert_eq!(e, 1.0);
            assert_relative_eq!(a.estimate().coefficients()[0], 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_residual_leaves_coefficients() {
        let mut a = one_center();
        a.set_coefficients(vec![0.3]).unwrap();
        let x = [0.2, 0.9];
        let y = a.estimate().evaluate(&x).unwrap();
        a.coefficient_step(&x, y, &StepperConfig::euler(1.0, 0.1, 0.01)).unwrap();
        assert_eq!(a.estimate().coefficients(), &[0.3]);
    }

    #[test]
    fn modes_differ_off_center() {
        let mut a = agent(1.0, &[1.0]);
        a.seed_basis(Points::from_rows(2, [[0.0, 0.0], [1.0, 0.0]]).unwrap(), vec![0.0, 0.0]).unwrap();
        let mut b = a.clone();
        let mut cfg = StepperConfig::euler(1.0, 0.1, 0.01);
        a.coefficient_step(&[0.3, 0.4], 1.0, &cfg).unwrap();
        cfg.preconditioned = false;
        b.coefficient_step(&[0.3, 0.4], 1.0, &cfg).unwrap();
        assert_ne!(a.estimate().coefficients(), b.estimate().coefficients());
        // Raw update is h*gamma*k(Xi, x)*e.
        let k = spec();
        assert_relative_eq!(b.estimate().coefficients()[0], 0.1 * k.eval(&[0.0, 0.0], &[0.3, 0.4]).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn empty_basis_step_is_noop() {
        let mut a = agent(1.0, &[1.0]);
        a.coefficient_step(&[0.0, 0.0], 1.0, &StepperConfig::euler(1.0, 0.1, 0.01)).unwrap();
        assert_eq!(a.basis_count(), 0);
    }

    #[test]
    fn multistep_bootstraps_from_euler() {
        // Second step of AB2 uses weights (3/2, -1/2) on frozen residuals.
        let mut a = one_center();
        let cfg = StepperConfig::adams_bashforth(2, 1.0, 0.1, 0.01);
        a.coefficient_step(&[0.5, 0.5], 1.0, &cfg).unwrap();
        assert_relative_eq!(a.estimate().coefficients()[0], 0.1, epsilon = 1e-15);
        a.coefficient_step(&[0.5, 0.5], 1.0, &cfg).unwrap();
        // residual now 0.9, previous frozen at 1.0
        assert_relative_eq!(a.estimate().coefficients()[0], 0.1 + 0.1 * (1.5 * 0.9 - 0.5 * 1.0), epsilon = 1e-15);
        assert_eq!(a.history().count(), 2);
    }

    #[test]
    fn novelty_examples() {
        let a = agent(1.0, &[1.0]);
        assert_eq!(a.novelty(&[0.3, 0.3]).unwrap(), 1.0);
        let a = one_center();
        assert!(a.novelty(&[0.5, 0.5]).unwrap() <= 1e-10);
        let x = [0.9, 0.1];
        let k = spec().eval(&x, &[0.5, 0.5]).unwrap();
        let eps = a.novelty(&x).unwrap();
        assert_relative_eq!(eps * eps, 1.0 - k * k, epsilon = 1e-12);
        let z = Points::from_rows(2, [[0.5, 0.5]]).unwrap();
        assert_relative_eq!(eps * eps, power_function_sq(&spec(), &z, &x).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn enrich_from_empty_and_contract() {
        let mut a = agent(1.0, &[1.0]);
        let cfg = StepperConfig::euler(1.0, 0.1, 0.1);
        a.enrich(&[0.2, 0.2], 0.8, &cfg).unwrap();
        assert_eq!(a.basis_count(), 1);
        assert_relative_eq!(a.estimate().coefficients()[0], 0.8, epsilon = 1e-15);
        a.enrich(&[0.9, 0.7], -0.4, &cfg).unwrap();
        assert!(a.interpolation_error() <= 1e-12);
        assert!(matches!(a.enrich(&[0.2, 0.2], 1.0, &cfg), Err(Error::NotNovel { .. })));
        assert!(matches!(a.enrich(&[0.2, 0.21], 1.0, &cfg), Err(Error::NotNovel { .. })));
    }

    #[test]
    fn first_sample_is_always_novel() {
        let mut a = agent(1.0, &[1.0]);
        let g = KernelExpansion::zero(spec());
        let log = a.agent_update(&StepperConfig::euler(1.0, 0.1, 0.5), &g, 1).unwrap();
        assert!(log.enriched);
        assert_eq!(log.basis_count, 1);
    }

    #[test]
    fn zero_field_keeps_zero_coefficients() {
        let mut a = agent(3.0, &[1.0, 0.5]);
        let g = KernelExpansion::zero(spec());
        let cfg = StepperConfig::adams_bashforth(2, 1.0, 0.1, 0.2);
        while !a.exhausted() {
            a.agent_update(&cfg, &g, 0).unwrap();
        }
        assert!(a.basis_count() > 1);
        assert!(a.estimate().coefficients().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn coarse_pass_fill_distance() {
        let rho = 0.5;
        let mut a = agent(3.0, &[rho]);
        let g = KernelExpansion::zero(spec());
        let cfg = StepperConfig::euler(1.0, 0.1, 0.05);
        while !a.exhausted() {
            a.agent_update(&cfg, &g, 0).unwrap();
        }
        let h = fill_distance(a.estimate().centers(), &square(3.0), 0.02);
        assert!(h <= rho * 2f64.sqrt(), "fill distance {h}");
    }

    #[test]
    fn divergence_guard_trips() {
        let mut a = agent(1.0, &[1.0]);
        a.seed_basis(Points::from_rows(2, [[0.0, 0.0], [0.05, 0.0]]).unwrap(), vec![0.0, 0.0]).unwrap();
        let cfg = StepperConfig::euler(1.0, 1e9, 0.01);
        let err = a.coefficient_step(&[0.3, 0.0], 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { agent: 1, .. }), "{err}");
    }

    #[test]
    fn dry_run_matches_live_center_count() {
        let r = square(4.0);
        let t = refine_schedule(&r, &[1.0, 0.5, 0.25]).unwrap();
        let mut a = AgentState::new(2, r, spec(), t.clone(), 0.0, 0).unwrap();
        let g = KernelExpansion::zero(spec());
        let cfg = StepperConfig::euler(1.0, 0.1, 0.05);
        a.initialize(&g, 1).unwrap();
        while !a.exhausted() {
            a.agent_update(&cfg, &g, 0).unwrap();
        }
        assert_eq!(AgentState::dry_run_centers(&spec(), &t.points, 0.05).unwrap(), a.basis_count());
    }

    #[test]
    fn gram_conditioning_improves_with_threshold() {
        let r = square(3.0);
        let t = refine_schedule(&r, &[1.0, 0.5, 0.25]).unwrap();
        let g = KernelExpansion::zero(spec());
        let mut prev = 0.0;
        for eps in [0.02, 0.05, 0.1, 0.2] {
            let mut a = AgentState::new(1, r.clone(), spec(), t.clone(), 0.0, 0).unwrap();
            let cfg = StepperConfig::euler(1.0, 0.1, eps);
            while !a.exhausted() {
                a.agent_update(&cfg, &g, 0).unwrap();
            }
            let lmin = symmetric_eigenvalues(&a.estimate().gram())[0];
            assert!(lmin > 0.0 && lmin >= prev, "eps {eps}: lambda_min {lmin} < {prev}");
            prev = lmin;
        }
    }

    #[test]
    fn trajectory_must_stay_in_subdomain() {
        let t = refine_schedule(&square(2.0), &[1.0]).unwrap();
        assert!(AgentState::new(1, square(1.0), spec(), t, 0.0, 0).is_err());
    }

    #[test]
    fn wendland_agent_runs() {
        let k = KernelSpec::new(KernelFamily::WendlandC2, 1.0, 2.0, 2).unwrap();
        let r = square(2.0);
        let t = refine_schedule(&r, &[1.0, 0.5]).unwrap();
        let mut a = AgentState::new(1, r, k, t, 0.0, 0).unwrap();
        let g = KernelExpansion::new(k, Points::from_rows(2, [[1.0, 1.0]]).unwrap(), vec![1.0]).unwrap();
        let cfg = StepperConfig::euler(1.0, 0.1, 0.05);
        while !a.exhausted() {
            let log = a.agent_update(&cfg, &g, 0).unwrap();
            if let Some(e) = log.reset_error {
                assert!(e <= 1e-10);
            }
        }
    }
}
