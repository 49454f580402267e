//! Decentralized kernel field estimation: agents sweep overlapping
//! subdomains, grow RKHS bases by novelty, adapt coefficients online, and
//! are fused through a partition of unity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod error;
pub mod field;
pub mod fusion;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod report;
pub mod rkhs;
pub mod scalar;
pub mod sim;

pub use agent::{adams_bashforth, AgentState, StepLog, StepperConfig};
pub use config::{Resolved, RunManifest, SimConfig};
pub use error::{Error, Result};
pub use field::{synthesize_field, FieldSpec, GroundTruth};
pub use fusion::{fused_evaluate, overlap_exchange, PeerSnapshot, SnapshotStore};
pub use geometry::{fill_distance, lawnmower_path, outward_schedule, refine_schedule, Cover, PartitionOfUnity, Rect, Trajectory};
pub use kernel::{gram, KernelFamily, KernelSpec};
pub use rkhs::{power_function_sq, KernelExpansion};
pub use scalar::{Points, Real};
pub use sim::{pe_margin, pe_stage_report, rate_fit, sweep_config, SweepRow, run_simulation, run_simulation_with_field, tune_epsilon, MetricsRecord, RunOutput};

pub type KernelSpec64 = KernelSpec<f64>;
pub type KernelExpansion64 = KernelExpansion<f64>;
pub type AgentState64 = AgentState<f64>;
pub type Points64 = Points<f64>;
pub type Resolved64 = Resolved<f64>;

pub type KernelSpec32 = KernelSpec<f32>;
pub type KernelExpansion32 = KernelExpansion<f32>;
pub type AgentState32 = AgentState<f32>;
pub type Points32 = Points<f32>;
pub type Resolved32 = Resolved<f32>;
