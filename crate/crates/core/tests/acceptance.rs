//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ks_core::agent::AgentState;
use ks_core::config::SimConfig;
use ks_core::geometry::{lawnmower_path, Cover, PartitionOfUnity, PouTableEntry, Rect, Trajectory};
use ks_core::kernel::{KernelFamily, KernelSpec};
use ks_core::report::{agent_steps_csv, centers_csv, error_surface_csv, exchanges_csv, metrics_csv};
use ks_core::rkhs::{expansion_difference_norm_sq, power_function_sq, KernelExpansion};
use ks_core::scalar::Points;
use ks_core::sim::{load_or_synthesize_field, pe_margin, rate_fit, run_simulation_with_field, sweep_config, tune_epsilon, RunOutput};
use ks_core::StepperConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CENTER_BUDGET: f64 = 500.0;
const CENTER_BUDGET_TOLERANCE: f64 = 0.2;
const TREND_ERROR_RATIO: f64 = 0.1;
const RUNTIME_LIMIT: Duration = Duration::from_secs(300);
const SWEEP_FACTORS: [f64; 6] = [1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 2.0, 3.0, 4.0];
const SWEEP_ERROR_RATIO: f64 = 0.5;
const LYAPUNOV_STEPS: usize = 10_000;
const LYAPUNOV_ALLOWANCE: f64 = 1e-10;
const H_GAMMA_SIGMA2: f64 = 0.5;
const PE_TARGET: f64 = 1e-3;
const PE_MAX_LOOPS: usize = 500;
const PE_STUCK_FRACTION: f64 = 0.1;
const POWER_TOLERANCE: f64 = 1e-8;
const POWER_PROBES: usize = 20;
const NOVELTY_AT_CENTER: f64 = 1e-10;
const POU_POINTS_PER_AXIS: usize = 200;
const RESET_TOLERANCE: f64 = 1e-6;
const WENDLAND_THEORY_EXPONENT: f64 = 3.0;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn default_config() -> SimConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    SimConfig::load(&path).expect("default config loads")
}

fn run(cfg: &SimConfig) -> (RunOutput<f64>, Duration) {
    let r = cfg.resolve::<f64>().unwrap();
    let field = load_or_synthesize_field(&r).unwrap();
    let t = Instant::now();
    let out = run_simulation_with_field(&r, &field).unwrap();
    (out, t.elapsed())
}

fn csvs(out: &RunOutput<f64>) -> Vec<String> {
    let mut v = vec![metrics_csv(&out.records), exchanges_csv(out), agent_steps_csv(out), error_surface_csv(out)];
    v.extend((0..out.agents.len()).map(|i| centers_csv(out, i)));
    v
}

fn fig2_trends(out: &RunOutput<f64>, elapsed: Duration) -> Outcome {
    let n = out.agents.len();
    let mut counts = vec![0usize; n];
    let mut means = Vec::new();
    let mut step = 0;
    for l in &out.step_logs {
        if l.step != step {
            means.push(counts.iter().sum::<usize>() as f64 / n as f64);
            step = l.step;
        }
        counts[l.agent - 1] = l.basis_count;
    }
    means.push(counts.iter().sum::<usize>() as f64 / n as f64);
    let basis_ok = means.windows(2).all(|w| w[1] >= w[0]);
    let stages: Vec<_> = out.stage_records().collect();
    let fills: Vec<f64> = stages.iter().map(|r| r.max_fill_distance).collect();
    let fill_ok = fills.windows(2).all(|w| w[1] < w[0]);
    let first = stages[0].sup_error;
    let last = out.records.last().unwrap().sup_error;
    let final_mean = out.records.last().unwrap().mean_basis_count;
    let budget_ok = (final_mean - CENTER_BUDGET).abs() <= CENTER_BUDGET_TOLERANCE * CENTER_BUDGET;
    let error_ok = last <= TREND_ERROR_RATIO * first;
    Outcome {
        id: 1,
        name: "trend reproduction",
        pass: basis_ok && fill_ok && error_ok && budget_ok && stages.len() >= 4 && elapsed <= RUNTIME_LIMIT,
        detail: format!(
            "{} stages, mean centers {final_mean}, basis non-decreasing {basis_ok}, fill {fills:.4?}, sup error {first:.4e} -> {last:.4e} (ratio {:.4}), {:.1?}",
            stages.len(),
            last / first,
            elapsed
        ),
    }
}

fn mismatch_sweep(base: &SimConfig) -> Outcome {
    let field = load_or_synthesize_field(&base.resolve::<f64>().unwrap()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for c in SWEEP_FACTORS {
        let cfg = sweep_config(base, c, false).unwrap();
        let out = run_simulation_with_field(&cfg.resolve::<f64>().unwrap(), &field).unwrap();
        let first = out.stage_records().next().unwrap().sup_error;
        let last = out.records.last().unwrap().sup_error;
        let ratio = last / first;
        pass &= ratio <= SWEEP_ERROR_RATIO;
        parts.push(format!("c={c:.3}: {ratio:.3}"));
    }
    Outcome { id: 2, name: "mismatch robustness", pass, detail: parts.join(", ") }
}

/// Agent on `[0, 6]^2` whose basis is the unit lattice and whose target lies
/// in that span; enrichment is disabled by a threshold above `sigma`.
fn span_setup(seed: u64) -> (AgentState<f64>, KernelExpansion<f64>, StepperConfig<f64>, Points<f64>) {
    let spec = KernelSpec::matern52(1.0, 1.0, 2).unwrap();
    let sub = Rect::new(vec![0.0, 0.0], vec![6.0, 6.0]).unwrap();
    let centers = lawnmower_path(&sub, 1.0).unwrap();
    let loop_path = lawnmower_path(&sub, 0.5).unwrap();
    let traj = Trajectory { points: loop_path.clone(), stage_ends: vec![loop_path.len()] };
    let mut agent = AgentState::new(1, sub, spec, traj, 0.0, seed).unwrap();
    agent.seed_basis(centers.clone(), vec![0.0; centers.len()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<f64> = (0..centers.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = KernelExpansion::new(spec, centers, alpha).unwrap();
    let h = H_GAMMA_SIGMA2 / spec.variance();
    let cfg = StepperConfig::euler(1.0, h, 2.0 * spec.sigma());
    (agent, g, cfg, loop_path)
}

fn lyapunov() -> Outcome {
    let (mut agent, g, cfg, path) = span_setup(11);
    let mut v = expansion_difference_norm_sq(&g, agent.estimate()).unwrap();
    let v0 = v;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..LYAPUNOV_STEPS {
        let x = path.get(k % path.len());
        agent.coefficient_step(x, g.evaluate(x).unwrap(), &cfg).unwrap();
        let next = expansion_difference_norm_sq(&g, agent.estimate()).unwrap();
        worst = worst.max(next - v);
        v = next;
    }
    Outcome {
        id: 3,
        name: "Lyapunov decrease",
        pass: worst <= LYAPUNOV_ALLOWANCE && agent.basis_count() == 49,
        detail: format!("V {v0:.4e} -> {v:.4e} over {LYAPUNOV_STEPS} steps, largest increase {worst:.3e}"),
    }
}

fn pe_convergence() -> Outcome {
    let (mut agent, g, cfg, path) = span_setup(12);
    let beta = pe_margin(&path, g.centers(), g.spec(), cfg.h).unwrap();
    let mut loops = 0;
    let mut err = expansion_difference_norm_sq(&g, agent.estimate()).unwrap().sqrt();
    while err >= PE_TARGET && loops < PE_MAX_LOOPS {
        for x in path.iter() {
            agent.coefficient_step(x, g.evaluate(x).unwrap(), &cfg).unwrap();
        }
        loops += 1;
        err = expansion_difference_norm_sq(&g, agent.estimate()).unwrap().sqrt();
    }
    let converged = beta > 0.0 && err < PE_TARGET;

    // Separated Wendland centers make the Gram matrix diagonal, so the error
    // component of a center the path never approaches cannot move.
    let spec = KernelSpec::new(KernelFamily::WendlandC2, 1.0, 1.0, 2).unwrap();
    let sub = Rect::new(vec![0.0, 0.0], vec![6.0, 2.0]).unwrap();
    let centers = Points::from_rows(2, [[1.0, 1.0], [3.0, 1.0], [5.0, 1.0]]).unwrap();
    let avoid = lawnmower_path(&Rect::new(vec![0.0, 0.0], vec![3.9, 2.0]).unwrap(), 0.25).unwrap();
    let traj = Trajectory { points: avoid.clone(), stage_ends: vec![avoid.len()] };
    let mut a = AgentState::new(1, sub, spec, traj, 0.0, 0).unwrap();
    a.seed_basis(centers.clone(), vec![0.0; 3]).unwrap();
    let g2 = KernelExpansion::new(spec, centers, vec![1.0, -0.7, 0.9]).unwrap();
    for _ in 0..PE_MAX_LOOPS {
        for x in avoid.iter() {
            a.coefficient_step(x, g2.evaluate(x).unwrap(), &cfg).unwrap();
        }
    }
    let comp = |i: usize| (g2.coefficients()[i] - a.estimate().coefficients()[i]).abs();
    let stuck = comp(2) > PE_STUCK_FRACTION * g2.coefficients()[2].abs();
    let beta_avoid = pe_margin(&avoid, g2.centers(), &spec, cfg.h).unwrap();
    Outcome {
        id: 4,
        name: "PE convergence",
        pass: converged && stuck,
        detail: format!(
            "beta {beta:.4e}, error {err:.3e} after {loops} loops; avoiding path beta {beta_avoid:.1e}, components [{:.1e}, {:.1e}, {:.3}]",
            comp(0),
            comp(1),
            comp(2)
        ),
    }
}

/// Minimizes `K(x,x) - 2 a.k + a.K a` by exact coordinate descent.
fn brute_force_power_sq(spec: &KernelSpec<f64>, z: &[[f64; 2]], x: &[f64]) -> f64 {
    let n = z.len();
    let kk: Vec<Vec<f64>> = z.iter().map(|p| z.iter().map(|q| spec.eval(p, q).unwrap()).collect()).collect();
    let kx: Vec<f64> = z.iter().map(|p| spec.eval(p, x).unwrap()).collect();
    let mut a = vec![0.0; n];
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let rest: f64 = (0..n).filter(|j| *j != i).map(|j| kk[i][j] * a[j]).sum();
            let new = (kx[i] - rest) / kk[i][i];
            moved = moved.max((new - a[i]).abs());
            a[i] = new;
        }
        if moved == 0.0 {
            break;
        }
    }
    let quad: f64 = (0..n).map(|i| (0..n).map(|j| a[i] * kk[i][j] * a[j]).sum::<f64>()).sum();
    let lin: f64 = (0..n).map(|i| a[i] * kx[i]).sum();
    spec.eval(x, x).unwrap() - 2.0 * lin + quad
}

fn power_oracle() -> Outcome {
    let spec = KernelSpec::matern52(1.0, 1.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut worst_novelty = 0.0f64;
    for probe in 0..POWER_PROBES {
        let size = 1 + probe % 3;
        let mut z: Vec<[f64; 2]> = Vec::new();
        while z.len() < size {
            let p = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
            if z.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= 0.2) {
                z.push(p);
            }
        }
        let x = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
        let pts = Points::from_rows(2, z.iter().copied()).unwrap();
        let closed = power_function_sq(&spec, &pts, &x).unwrap();
        worst = worst.max((closed - brute_force_power_sq(&spec, &z, &x)).abs());

        let sub = Rect::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let traj = Trajectory { points: pts.clone(), stage_ends: vec![pts.len()] };
        let mut agent = AgentState::new(1, sub, spec, traj, 0.0, 0).unwrap();
        agent.seed_basis(pts.clone(), vec![0.0; size]).unwrap();
        for c in pts.iter() {
            worst_novelty = worst_novelty.max(agent.novelty(c).unwrap());
        }
    }
    Outcome {
        id: 5,
        name: "power-function oracle",
        pass: worst <= POWER_TOLERANCE && worst_novelty <= NOVELTY_AT_CENTER,
        detail: format!("max |closed - brute force| {worst:.2e} over {POWER_PROBES} probes, max novelty at centers {worst_novelty:.2e}"),
    }
}

fn pou() -> Outcome {
    let omega = Rect::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
    let cover = Cover::orthants(omega.clone(), 0.2).unwrap();
    let p = PartitionOfUnity::overlap_average(cover.clone());
    let grid = omega.grid_with_counts(&[POU_POINTS_PER_AXIS; 2]);
    let mut bad = 0;
    for x in grid.iter() {
        let w = p.weights(x).weights;
        let sum: f64 = w.iter().sum();
        let support = w.iter().zip(cover.subdomains()).all(|(wi, s)| *wi == 0.0 || s.contains(x));
        if sum != 1.0 || !support || w.iter().any(|wi| *wi < 0.0) {
            bad += 1;
        }
    }
    let psi1 = |x: [f64; 2]| p.weights(&x).weights[0];
    let table = [psi1([1.0, 1.0]), psi1([5.0, 1.0]), psi1([5.0, 5.0])];
    let custom = PartitionOfUnity::custom_table(
        cover,
        vec![PouTableEntry { members: vec![0, 1], weights: vec![0.75, 0.25, 0.0, 0.0] }],
    )
    .unwrap();
    let custom_ok = custom.weights(&[5.0, 1.0]).weights[..2] == [0.75, 0.25];
    Outcome {
        id: 6,
        name: "partition of unity",
        pass: bad == 0 && table == [1.0, 0.5, 0.25] && custom_ok,
        detail: format!("{} grid points, {bad} violations, psi1 cases {table:?}", grid.len()),
    }
}

fn interpolation_reset(out: &RunOutput<f64>) -> Outcome {
    let events: Vec<f64> = out.step_logs.iter().filter(|l| l.enriched).map(|l| l.reset_error.unwrap_or(f64::INFINITY)).collect();
    let worst = events.iter().copied().fold(0.0, f64::max);
    Outcome {
        id: 7,
        name: "interpolation reset",
        pass: !events.is_empty() && worst <= RESET_TOLERANCE,
        detail: format!("{} enrichment events, worst reset error {worst:.2e}", events.len()),
    }
}

fn rate_sign(out: &RunOutput<f64>, base: &SimConfig) -> Outcome {
    let (slope, _) = rate_fit(&out.records).unwrap();
    let mut cfg = base.clone();
    cfg.field.family = KernelFamily::WendlandC2;
    cfg.field.ell = 3.0;
    let resolved = cfg.resolve::<f64>().unwrap();
    cfg.stepper.epsilon_bar = tune_epsilon(&resolved, CENTER_BUDGET as usize, 0.1).unwrap().epsilon_bar;
    let (w, _) = run(&cfg);
    let wendland = rate_fit(&w.records).map(|r| format!("{:.3}", r.0)).unwrap_or_else(|e| e.to_string());
    Outcome {
        id: 8,
        name: "rate sign",
        pass: slope > 0.0,
        detail: format!("default slope {slope:.3}; Wendland C2 slope {wendland} (power-function exponent {WENDLAND_THEORY_EXPONENT})"),
    }
}

fn determinism(base: &SimConfig, reference: &RunOutput<f64>) -> Outcome {
    let mut serial = base.clone();
    serial.sim.parallel = false;
    let mut parallel = base.clone();
    parallel.sim.parallel = true;
    let a = csvs(reference);
    let b = csvs(&run(&serial).0);
    let c = csvs(&run(&parallel).0);
    Outcome {
        id: 9,
        name: "determinism",
        pass: a == b && a == c,
        detail: format!("{} CSVs compared across repeat, serial and parallel runs", a.len()),
    }
}

fn main() -> ExitCode {
    let base = default_config();
    let (out, elapsed) = run(&base);
    let outcomes = [
        fig2_trends(&out, elapsed),
        mismatch_sweep(&base),
        lyapunov(),
        pe_convergence(),
        power_oracle(),
        pou(),
        interpolation_reset(&out),
        rate_sign(&out, &base),
        determinism(&base, &out),
    ];
    for o in &outcomes {
        println!("{} {}. {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
