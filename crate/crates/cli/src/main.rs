use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use ks_core::field::{fmt_num, write_field};
use ks_core::report::write_run;
use ks_core::sim::{load_or_synthesize_field, pe_stage_report, run_simulation_with_field, sweep_config, tune_epsilon, SweepRow};
use ks_core::{rate_fit, Error, RunManifest, SimConfig};

const FIELD_FILE: &str = "field.txt";
const SUMMARY_FILE: &str = "summary.csv";
const DEFAULT_FACTORS: &str = "1/4,1/3,1/2,2,3,4";

#[derive(Parser)]
#[command(name = "ks", version, about = "Decentralized kernel field estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `field.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `sim.parallel`.
    #[arg(long, value_enum)]
    parallel: Option<Toggle>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the ground-truth field and write it as an artifact.
    SynthField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment and write its CSVs.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run once per hyperparameter factor against a shared field.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated factors; fractions like `1/3` are accepted.
        #[arg(long, default_value = DEFAULT_FACTORS)]
        factors: String,
        /// Re-tune the novelty threshold to `sim.center_budget` for each factor.
        #[arg(long)]
        retune: bool,
    },
    /// Find a novelty threshold that meets a center budget.
    TuneEpsilon {
        #[command(flatten)]
        common: Common,
        /// Mean centers per agent; defaults to `sim.center_budget`.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
    },
    /// Report persistence-of-excitation margins of every stage loop.
    PeCheck {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<SimConfig> {
    let mut cfg = SimConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.field.seed = seed;
    }
    if let Some(p) = common.parallel {
        cfg.sim.parallel = matches!(p, Toggle::On);
    }
    Ok(cfg)
}

fn parse_factor(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>()? / d.trim().parse::<f64>()?,
        None => s.parse::<f64>()?,
    };
    if !(v > 0.0 && v.is_finite()) {
        bail!("factor `{s}` must be positive and finite");
    }
    Ok(v)
}

fn parse_factors(list: &str) -> Result<Vec<f64>> {
    list.split(',').map(|f| parse_factor(f).with_context(|| format!("bad factor list `{list}`"))).collect()
}

fn synth_field(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let resolved = cfg.resolve::<f64>()?;
    let field = load_or_synthesize_field(&resolved)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(FIELD_FILE);
    write_field(&path, &field, cfg.field.seed).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} ({} centers)", path.display(), field.expansion.len());
    Ok(())
}

fn run_one(cfg: &SimConfig, config_path: Option<PathBuf>, out: &Path, field: Option<&ks_core::GroundTruth<f64>>) -> Result<SweepRow<f64>> {
    let resolved = cfg.resolve::<f64>()?;
    let owned;
    let field = match field {
        Some(f) => f,
        None => {
            owned = load_or_synthesize_field(&resolved)?;
            &owned
        }
    };
    let started = std::time::Instant::now();
    let output = run_simulation_with_field(&resolved, field)?;
    info!("run finished in {:.1?}", started.elapsed());
    let manifest = RunManifest::new(cfg.clone(), config_path, out.to_path_buf());
    write_run(out, &manifest, &output).with_context(|| format!("writing run to {}", out.display()))?;
    let last = output.records.last().expect("runs record at least one stage");
    println!(
        "run {}: step {} mean_basis_count {} max_fill_distance {} sup_error {} exchanges {}",
        manifest.run_id,
        last.step,
        last.mean_basis_count,
        last.max_fill_distance,
        last.sup_error,
        last.exchanges_cum
    );
    match rate_fit(&output.records) {
        Ok((slope, _)) => println!("rate slope {slope:.3}"),
        Err(e) => info!("no rate estimate: {e}"),
    }
    Ok(SweepRow::from_run(cfg.estimator.scale, &resolved, &output))
}

fn sweep(common: &Common, out: &Path, factors: &str, retune: bool) -> Result<()> {
    let factors = parse_factors(factors)?;
    let base = load_config(common)?;
    let resolved = base.resolve::<f64>()?;
    let field = load_or_synthesize_field(&resolved)?;
    fs::create_dir_all(out)?;
    write_field(&out.join(FIELD_FILE), &field, base.field.seed)?;
    let mut summary = String::from("factor,epsilon_bar,first_sup_error,final_sup_error,final_mean_basis_count\n");
    for c in factors {
        let cfg = sweep_config(&base, c, retune)?;
        let dir = out.join(format!("c_{c:.4}"));
        println!("factor {c}");
        let row = run_one(&cfg, Some(common.config.clone()), &dir, Some(&field))?;
        writeln!(
            summary,
            "{},{},{},{},{}",
            fmt_num(row.factor),
            fmt_num(row.epsilon_bar),
            fmt_num(row.first_sup_error),
            fmt_num(row.final_sup_error),
            fmt_num(row.final_mean_basis_count)
        )?;
    }
    fs::write(out.join(SUMMARY_FILE), summary)?;
    Ok(())
}

fn tune(common: &Common, budget: Option<usize>, tolerance: f64) -> Result<()> {
    let cfg = load_config(common)?;
    let resolved = cfg.resolve::<f64>()?;
    let Some(budget) = budget.or(resolved.center_budget) else {
        bail!("no budget: pass --budget or set sim.center_budget");
    };
    let t = tune_epsilon(&resolved, budget, tolerance)?;
    println!("epsilon_bar = {}", fmt_num(t.epsilon_bar));
    println!("mean centers per agent = {} (budget {budget}, {} iterations)", t.mean_centers, t.iterations);
    if !t.within_tolerance {
        bail!("budget {budget} not met within {:.0}%", tolerance * 100.0);
    }
    Ok(())
}

fn pe_check(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let resolved = cfg.resolve::<f64>()?;
    let report = pe_stage_report(&resolved)?;
    println!("agent,stage,resolution,pe_margin");
    for (i, stages) in report.iter().enumerate() {
        for (s, beta) in stages.iter().enumerate() {
            println!("{},{},{},{}", i + 1, s + 1, fmt_num(resolved.resolutions[s]), fmt_num(*beta));
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthField { common, out } => synth_field(&common, &out),
        Command::Run { common, out } => {
            let cfg = load_config(&common)?;
            run_one(&cfg, Some(common.config.clone()), &out, None).map(drop)
        }
        Command::Sweep { common, out, factors, retune } => sweep(&common, &out, &factors, retune),
        Command::TuneEpsilon { common, budget, tolerance } => tune(&common, budget, tolerance),
        Command::PeCheck { common } => pe_check(&common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KS_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Divergence { .. }) => ExitCode::from(3),
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
