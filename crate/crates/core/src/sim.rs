//! Experiment orchestration: all agents step through their refinement
//! schedules in lockstep, meet for overlap exchanges, and are fused at
//! stage ends (and every `fuse_every` steps) to record metrics.

use rayon::prelude::*;

use crate::agent::{AgentState, StepLog};
use crate::config::{Resolved, SimConfig};
use crate::field::{synthesize_field, read_field, GroundTruth};
use crate::fusion::{fused_evaluate, overlap_exchange, ExchangeEvent, PeerSnapshot, SnapshotStore};
use crate::geometry::{fill_distance, outward_schedule, PartitionOfUnity, Trajectory};
use crate::kernel::{gram_entries, KernelSpec};
use crate::linalg::{factor_with_jitter, symmetric_eigenvalues, Mat};
use crate::rkhs::KernelExpansion;
use crate::scalar::{Points, Real};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord<T> {
    pub step: usize,
    /// `step * h`.
    pub t: T,
    /// Zero-based refinement stage the record belongs to.
    pub stage: usize,
    pub stage_end: bool,
    pub mean_basis_count: T,
    pub max_fill_distance: T,
    pub sup_error: T,
    pub exchanges_cum: usize,
    pub basis_counts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub records: Vec<MetricsRecord<T>>,
    pub snapshots: Vec<PeerSnapshot<T>>,
    pub agents: Vec<AgentState<T>>,
    pub step_logs: Vec<StepLog<T>>,
    pub exchanges: Vec<ExchangeEvent>,
    pub eval_grid: Points<T>,
    /// `|g_hat - g|` on `eval_grid` after the last step.
    pub error_surface: Vec<T>,
}

impl<T: Real> RunOutput<T> {
    pub fn stage_records(&self) -> impl Iterator<Item = &MetricsRecord<T>> {
        self.records.iter().filter(|r| r.stage_end)
    }
}

/// The configured ground truth: loaded from the artifact if one is named,
/// synthesized otherwise.
pub fn load_or_synthesize_field<T: Real>(cfg: &Resolved<T>) -> Result<GroundTruth<T>> {
    match &cfg.field_artifact {
        Some(path) => Ok(read_field(path)?.0),
        None => synthesize_field(&cfg.field),
    }
}

/// `max_x |g(x) - g_hat(x)|` over `grid`.
pub fn sup_error<T: Real>(g: &KernelExpansion<T>, snapshots: &[PeerSnapshot<T>], pou: &PartitionOfUnity<T>, grid: &Points<T>) -> T {
    abs_errors(g, snapshots, pou, grid, false).into_iter().fold(T::zero(), T::max)
}

fn abs_errors<T: Real>(g: &KernelExpansion<T>, snapshots: &[PeerSnapshot<T>], pou: &PartitionOfUnity<T>, grid: &Points<T>, parallel: bool) -> Vec<T> {
    let f = |x: &[T]| (g.evaluate_unchecked(x) - fused_evaluate(snapshots, pou, x)).abs();
    if parallel {
        grid.as_flat().par_chunks_exact(grid.dim()).map(f).collect()
    } else {
        grid.iter().map(f).collect()
    }
}

fn build_agents<T: Real>(cfg: &Resolved<T>) -> Result<Vec<AgentState<T>>> {
    cfg.cover()
        .subdomains()
        .iter()
        .enumerate()
        .map(|(i, sub)| {
            let traj = outward_schedule(cfg.cover().omega(), sub, &cfg.resolutions)?;
            AgentState::new(i + 1, sub.clone(), cfg.estimator, traj, cfg.field.noise_std, cfg.field.seed)
        })
        .collect()
}

/// What a fusion event needs besides the agents.
struct Recorder<'a, T> {
    cfg: &'a Resolved<T>,
    field: &'a GroundTruth<T>,
    eval_grid: &'a Points<T>,
}

impl<T: Real> Recorder<'_, T> {
    fn record(&self, agents: &[AgentState<T>], store: &mut SnapshotStore<T>, step: usize, stage: usize, stage_end: bool) -> MetricsRecord<T> {
        let cfg = self.cfg;
        store.refresh_all(agents, step);
        let fill = |a: &AgentState<T>| fill_distance(a.estimate().centers(), a.subdomain(), cfg.fill_resolution);
        let fills: Vec<T> = if cfg.parallel { agents.par_iter().map(fill).collect() } else { agents.iter().map(fill).collect() };
        let errors = abs_errors(&self.field.expansion, store.snapshots(), &cfg.pou, self.eval_grid, cfg.parallel);
        let basis_counts: Vec<usize> = agents.iter().map(AgentState::basis_count).collect();
        MetricsRecord {
            step,
            t: T::lit(step as f64) * cfg.stepper.h,
            stage,
            stage_end,
            mean_basis_count: T::lit(basis_counts.iter().sum::<usize>() as f64 / agents.len() as f64),
            max_fill_distance: fills.into_iter().fold(T::zero(), T::max),
            sup_error: errors.into_iter().fold(T::zero(), T::max),
            exchanges_cum: store.log().len(),
            basis_counts,
        }
    }
}

/// Runs every agent through its schedule against `field`.
pub fn run_simulation_with_field<T: Real>(cfg: &Resolved<T>, field: &GroundTruth<T>) -> Result<RunOutput<T>> {
    if cfg.estimator.dim() != field.expansion.spec().dim() {
        return Err(Error::DimensionMismatch { expected: field.expansion.spec().dim(), got: cfg.estimator.dim() });
    }
    let mut agents = build_agents(cfg)?;
    for a in &mut agents {
        a.initialize(&field.expansion, cfg.initial_samples.min(a.trajectory().points.len()))?;
    }
    let eval_grid = cfg.cover().omega().grid_with_counts(&vec![cfg.eval_grid_points; cfg.cover().dim()]);
    let mut store = SnapshotStore::new(&agents, 0);
    let recorder = Recorder { cfg, field, eval_grid: &eval_grid };
    let mut records = Vec::new();
    let mut step_logs = Vec::new();
    let mut step = 0usize;
    let stages = cfg.resolutions.len();
    let stepper = &cfg.stepper;
    let g = &field.expansion;

    for stage in 0..stages {
        let ends: Vec<usize> = agents.iter().map(|a| a.trajectory().stage_ends[stage]).collect();
        while agents.iter().zip(&ends).any(|(a, e)| a.cursor() < *e) {
            step += 1;
            let update = |(a, end): (&mut AgentState<T>, &usize)| -> Result<Option<StepLog<T>>> {
                if a.cursor() < *end {
                    a.agent_update(stepper, g, step).map(Some)
                } else {
                    Ok(None)
                }
            };
            let logs: Vec<Result<Option<StepLog<T>>>> = if cfg.parallel {
                agents.par_iter_mut().zip(ends.par_iter()).map(update).collect()
            } else {
                agents.iter_mut().zip(ends.iter()).map(update).collect()
            };
            for l in logs {
                if let Some(l) = l? {
                    step_logs.push(l);
                }
            }
            overlap_exchange(&agents, cfg.cover(), &mut store, step);
            if cfg.fuse_every > 0 && step.is_multiple_of(cfg.fuse_every) {
                records.push(recorder.record(&agents, &mut store, step, stage, false));
            }
        }
        let rec = recorder.record(&agents, &mut store, step, stage, true);
        log::info!(
            "stage {} done at step {}: mean L = {}, max fill = {}, sup error = {}",
            stage + 1,
            step,
            rec.mean_basis_count,
            rec.max_fill_distance,
            rec.sup_error
        );
        match records.last_mut() {
            Some(last) if last.step == step => *last = rec,
            _ => records.push(rec),
        }
    }

    store.refresh_all(&agents, step);
    let error_surface = abs_errors(g, store.snapshots(), &cfg.pou, &eval_grid, cfg.parallel);
    Ok(RunOutput {
        records,
        snapshots: store.snapshots().to_vec(),
        exchanges: store.log().to_vec(),
        agents,
        step_logs,
        eval_grid,
        error_surface,
    })
}

/// Loads or synthesizes the field once, then runs.
pub fn run_simulation<T: Real>(cfg: &Resolved<T>) -> Result<(GroundTruth<T>, RunOutput<T>)> {
    let field = load_or_synthesize_field(cfg)?;
    let out = run_simulation_with_field(cfg, &field)?;
    Ok((field, out))
}

/// Persistence-of-excitation margin of `traj` over the span of `z`: the
/// smallest `beta` with `h sum_k f(x_k)^2 >= beta ||f||^2` for every `f` in
/// the span, i.e. the smallest generalized eigenvalue of
/// `(h sum_k k(Z,x_k) k(x_k,Z), K(Z,Z))`.
pub fn pe_margin<T: Real>(traj: &Points<T>, z: &Points<T>, spec: &KernelSpec<T>, h: T) -> Result<T> {
    spec.check_points(traj)?;
    spec.check_points(z)?;
    if traj.is_empty() || z.is_empty() {
        return Err(Error::InvalidArgument("pe_margin needs a non-empty segment and center set".into()));
    }
    crate::rkhs::check_distinct(z)?;
    let k = gram_entries(spec, z, z);
    let (chol, _) = factor_with_jitter(&k, spec.default_jitter())?;
    // W = L^{-1} [k(Z, x_1) ... k(Z, x_n)], so the reduced matrix is h W W^T.
    let n = z.len();
    let cols: Vec<Vec<T>> = traj
        .iter()
        .map(|x| {
            let mut c = spec.column(z, x);
            chol.forward(&mut c);
            c
        })
        .collect();
    let mut c: Mat<T> = Mat::zeros(n, n);
    for w in &cols {
        for i in 0..n {
            if w[i] == T::zero() {
                continue;
            }
            for j in 0..=i {
                c[(i, j)] += w[i] * w[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = c[(i, j)] * h;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
        c[(i, i)] *= h;
    }
    Ok(symmetric_eigenvalues(&c)[0].max(T::zero()))
}

/// Least-squares fit of `log sup_error = slope * log max_fill + intercept`
/// over stage-end records. Records with non-positive error or fill distance
/// are skipped.
pub fn rate_fit<T: Real>(records: &[MetricsRecord<T>]) -> Result<(T, T)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.stage_end)
        .filter(|r| r.sup_error > T::zero() && r.max_fill_distance > T::zero() && r.max_fill_distance.is_finite())
        .map(|r| (r.max_fill_distance.as_f64().ln(), r.sup_error.as_f64().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || !(sxx > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least two usable records with distinct fill distances, got {}",
            pts.len()
        )));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((T::lit(slope), T::lit(my - slope * mx)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonTuning<T> {
    pub epsilon_bar: T,
    pub mean_centers: f64,
    pub within_tolerance: bool,
    pub iterations: usize,
}

fn mean_dry_run<T: Real>(spec: &KernelSpec<T>, trajectories: &[Trajectory<T>], eps: T, parallel: bool) -> Result<f64> {
    let count = |t: &Trajectory<T>| AgentState::dry_run_centers(spec, &t.points, eps);
    let counts: Vec<usize> = if parallel {
        trajectories.par_iter().map(count).collect::<Result<_>>()?
    } else {
        trajectories.iter().map(count).collect::<Result<_>>()?
    };
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

/// Bisection (in log space) on the novelty threshold so that the mean
/// number of admitted centers per agent over the full schedule lands within
/// `tolerance * budget` of `budget`. Center admission depends only on the
/// trajectory geometry, so the replays never touch the field.
pub fn tune_epsilon<T: Real>(cfg: &Resolved<T>, budget: usize, tolerance: f64) -> Result<EpsilonTuning<T>> {
    let trajectories: Vec<Trajectory<T>> =
        cfg.cover().subdomains().iter().map(|s| outward_schedule(cfg.cover().omega(), s, &cfg.resolutions)).collect::<Result<_>>()?;
    let spec = cfg.estimator;
    let target = budget as f64;
    let sigma = spec.sigma().as_f64();
    let (mut lo, mut hi) = ((sigma * 1e-9).ln(), sigma.ln());
    let mut best = (f64::INFINITY, T::lit(sigma), 0.0);
    let mut iterations = 0;
    for _ in 0..60 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let eps = T::lit(mid.exp());
        let mean = mean_dry_run(&spec, &trajectories, eps, cfg.parallel)?;
        let miss = (mean - target).abs();
        if miss < best.0 {
            best = (miss, eps, mean);
        }
        if miss <= tolerance * target {
            break;
        }
        // Fewer centers as the threshold grows.
        if mean > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let within = best.0 <= tolerance * target;
    if !within {
        log::warn!("epsilon tuning missed budget {budget}: best mean {} at epsilon {}", best.2, best.1);
    }
    Ok(EpsilonTuning { epsilon_bar: best.1, mean_centers: best.2, within_tolerance: within, iterations })
}

/// PE margin of each agent's stage loops: entry `[i][s]` is the margin of
/// stage `s` of agent `i` against the centers admitted by the end of that
/// stage. Centers come from geometry-only replays, so no field is needed.
pub fn pe_stage_report<T: Real>(cfg: &Resolved<T>) -> Result<Vec<Vec<T>>> {
    let spec = cfg.estimator;
    let per_agent = |sub: &crate::geometry::Rect<T>| -> Result<Vec<T>> {
        let traj = outward_schedule(cfg.cover().omega(), sub, &cfg.resolutions)?;
        (0..traj.stages())
            .map(|s| {
                let range = traj.stage(s);
                let upto = traj.points.prefix(range.end);
                let admitted = AgentState::dry_run_admitted(&spec, &upto, cfg.stepper.epsilon_bar)?;
                let segment = Points::from_flat(upto.dim(), upto.as_flat()[range.start * upto.dim()..].to_vec())?;
                pe_margin(&segment, &admitted, &spec, cfg.stepper.h)
            })
            .collect()
    };
    let subs = cfg.cover().subdomains();
    if cfg.parallel {
        subs.par_iter().map(per_agent).collect()
    } else {
        subs.iter().map(per_agent).collect()
    }
}

/// One row of a mismatch sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow<T> {
    pub factor: f64,
    pub epsilon_bar: T,
    pub first_sup_error: T,
    pub final_sup_error: T,
    pub final_mean_basis_count: T,
}

impl<T: Real> SweepRow<T> {
    pub fn from_run(factor: f64, cfg: &Resolved<T>, out: &RunOutput<T>) -> Self {
        let mut stages = out.stage_records();
        let first = stages.next().expect("runs have at least one stage");
        let last = out.records.last().expect("runs have at least one record");
        Self {
            factor,
            epsilon_bar: cfg.stepper.epsilon_bar,
            first_sup_error: first.sup_error,
            final_sup_error: last.sup_error,
            final_mean_basis_count: last.mean_basis_count,
        }
    }
}

/// The config for estimator hyperparameters `c` times the field's. With
/// `retune`, the novelty threshold is re-tuned to the configured center
/// budget for the scaled kernel.
pub fn sweep_config(base: &SimConfig, c: f64, retune: bool) -> Result<SimConfig> {
    let mut cfg = base.clone();
    cfg.estimator.scale = c;
    if retune {
        let budget = cfg
            .sim
            .center_budget
            .ok_or_else(|| Error::InvalidArgument("retuning needs sim.center_budget".into()))?;
        let resolved = cfg.resolve::<f64>()?;
        cfg.stepper.epsilon_bar = tune_epsilon(&resolved, budget, 0.1)?.epsilon_bar;
    }
    Ok(cfg)
}
