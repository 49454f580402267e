//! CSV and manifest output for a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunManifest;
use crate::field::fmt_num;
use crate::sim::{MetricsRecord, RunOutput};
use crate::scalar::Real;
use crate::Result;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EXCHANGES_FILE: &str = "exchanges.csv";
pub const AGENT_STEPS_FILE: &str = "agent_steps.csv";
pub const ERROR_SURFACE_FILE: &str = "error_surface.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn centers_file(agent: usize) -> String {
    format!("centers_agent_{agent}.csv")
}

pub fn metrics_csv<T: Real>(records: &[MetricsRecord<T>]) -> String {
    let mut s = String::from("step,t,mean_basis_count,max_fill_distance,sup_error,exchanges_cum\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step,
            fmt_num(r.t),
            fmt_num(r.mean_basis_count),
            fmt_num(r.max_fill_distance),
            fmt_num(r.sup_error),
            r.exchanges_cum
        )
        .unwrap();
    }
    s
}

pub fn exchanges_csv<T: Real>(out: &RunOutput<T>) -> String {
    let mut s = String::from("step,agent_i,agent_j,payload_i,payload_j\n");
    for e in &out.exchanges {
        writeln!(s, "{},{},{},{},{}", e.step, e.agent_i, e.agent_j, e.payload_i, e.payload_j).unwrap();
    }
    s
}

pub fn agent_steps_csv<T: Real>(out: &RunOutput<T>) -> String {
    let dim = out.eval_grid.dim();
    let mut s = String::from("step,agent,");
    for k in 1..=dim {
        write!(s, "x{k},").unwrap();
    }
    s.push_str("basis_count,novelty,residual,enriched,reset_error\n");
    for l in &out.step_logs {
        write!(s, "{},{},", l.step, l.agent).unwrap();
        for v in &l.x {
            write!(s, "{},", fmt_num(*v)).unwrap();
        }
        writeln!(
            s,
            "{},{},{},{},{}",
            l.basis_count,
            fmt_num(l.novelty),
            fmt_num(l.residual),
            u8::from(l.enriched),
            l.reset_error.map(fmt_num).unwrap_or_default()
        )
        .unwrap();
    }
    s
}

pub fn error_surface_csv<T: Real>(out: &RunOutput<T>) -> String {
    let dim = out.eval_grid.dim();
    let mut s = String::new();
    for k in 1..=dim {
        write!(s, "x{k},").unwrap();
    }
    s.push_str("abs_error\n");
    for (x, e) in out.eval_grid.iter().zip(&out.error_surface) {
        for v in x {
            write!(s, "{},", fmt_num(*v)).unwrap();
        }
        writeln!(s, "{}", fmt_num(*e)).unwrap();
    }
    s
}

/// Final centers and coefficients of one agent.
pub fn centers_csv<T: Real>(out: &RunOutput<T>, agent: usize) -> String {
    let est = out.agents[agent].estimate();
    let mut s = String::new();
    for k in 1..=est.centers().dim() {
        write!(s, "x{k},").unwrap();
    }
    s.push_str("alpha\n");
    for (c, a) in est.centers().iter().zip(est.coefficients()) {
        for v in c {
            write!(s, "{},", fmt_num(*v)).unwrap();
        }
        writeln!(s, "{}", fmt_num(*a)).unwrap();
    }
    s
}

/// Writes every artifact of a run into `dir`, creating it if needed.
pub fn write_run<T: Real>(dir: &Path, manifest: &RunManifest, out: &RunOutput<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_toml_string())?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&out.records))?;
    fs::write(dir.join(EXCHANGES_FILE), exchanges_csv(out))?;
    fs::write(dir.join(AGENT_STEPS_FILE), agent_steps_csv(out))?;
    fs::write(dir.join(ERROR_SURFACE_FILE), error_surface_csv(out))?;
    for (i, a) in out.agents.iter().enumerate() {
        fs::write(dir.join(centers_file(a.id())), centers_csv(out, i))?;
    }
    Ok(())
}
