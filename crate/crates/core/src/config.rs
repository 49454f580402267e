//! Experiment configuration: a sectioned TOML file mirroring the modules,
//! parsed into `f64` and resolved into typed runtime objects for any scalar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{adams_bashforth, StepperConfig};
use crate::field::FieldSpec;
use crate::geometry::{Cover, PartitionOfUnity, PouTableEntry, Rect};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub field: FieldSection,
    #[serde(default)]
    pub cover: CoverSection,
    #[serde(default)]
    pub pou: PouSection,
    pub stepper: StepperSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    pub sim: SimSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default = "default_family")]
    pub family: KernelFamily,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub ell: f64,
    /// Synthesis grid points per axis over omega.
    #[serde(default = "default_field_grid")]
    pub grid_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_std: f64,
    /// Load the field from an artifact instead of synthesizing it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverLayout {
    /// `2^d` overlapping orthants of omega.
    Orthants,
    /// The listed `subdomains`.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverSection {
    #[serde(default = "default_omega_lo")]
    pub omega_lo: Vec<f64>,
    #[serde(default = "default_omega_hi")]
    pub omega_hi: Vec<f64>,
    #[serde(default = "default_layout")]
    pub layout: CoverLayout,
    /// Orthant enlargement per side, as a fraction of the orthant width.
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subdomains: Vec<RectSection>,
}

impl Default for CoverSection {
    fn default() -> Self {
        Self {
            omega_lo: default_omega_lo(),
            omega_hi: default_omega_hi(),
            layout: default_layout(),
            overlap: default_overlap(),
            subdomains: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PouKindName {
    #[default]
    OverlapAverage,
    CustomTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PouTableRow {
    /// 1-based subdomain indices.
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PouSection {
    #[serde(default)]
    pub kind: PouKindName,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<PouTableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// Adams–Bashforth order; ignored when `a` is given.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub preconditioned: bool,
    pub epsilon_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Defaults to the field's family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<KernelFamily>,
    /// Estimator hyperparameters are `scale` times the field's.
    #[serde(default = "one")]
    pub scale: f64,
    /// Absolute overrides, applied after scaling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { family: None, scale: 1.0, sigma: None, ell: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Lawnmower resolutions, strictly decreasing.
    pub resolutions: Vec<f64>,
    /// Evaluation grid points per axis over omega for the sup-norm error.
    #[serde(default = "default_eval_points")]
    pub eval_grid_points: usize,
    /// Grid spacing for fill-distance estimates.
    #[serde(default = "default_fill_resolution")]
    pub fill_resolution: f64,
    /// Extra fusion events every `fuse_every` steps; 0 fuses at stage ends only.
    #[serde(default)]
    pub fuse_every: usize,
    /// Waypoints used to seed each agent's basis.
    #[serde(default = "default_initial")]
    pub initial_samples: usize,
    /// Target mean centers per agent for epsilon tuning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_budget: Option<usize>,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_family() -> KernelFamily {
    KernelFamily::Matern52
}
fn default_field_grid() -> usize {
    30
}
fn default_omega_lo() -> Vec<f64> {
    vec![0.0, 0.0]
}
fn default_omega_hi() -> Vec<f64> {
    vec![10.0, 10.0]
}
fn default_layout() -> CoverLayout {
    CoverLayout::Orthants
}
fn default_overlap() -> f64 {
    0.2
}
fn default_h() -> f64 {
    0.02
}
fn default_order() -> usize {
    2
}
fn default_eval_points() -> usize {
    100
}
fn default_fill_resolution() -> f64 {
    0.05
}
fn default_initial() -> usize {
    1
}

/// Runtime objects built from a [`SimConfig`].
#[derive(Clone, Debug)]
pub struct Resolved<T> {
    pub field: FieldSpec<T>,
    pub field_artifact: Option<PathBuf>,
    pub pou: PartitionOfUnity<T>,
    pub stepper: StepperConfig<T>,
    pub estimator: KernelSpec<T>,
    pub resolutions: Vec<T>,
    pub eval_grid_points: usize,
    pub fill_resolution: T,
    pub fuse_every: usize,
    pub initial_samples: usize,
    pub center_budget: Option<usize>,
    pub parallel: bool,
}

impl<T: Real> Resolved<T> {
    pub fn cover(&self) -> &Cover<T> {
        self.pou.cover()
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Artifact paths are relative to the config file.
        if let (Some(a), Some(dir)) = (&cfg.field.artifact, path.parent()) {
            if a.is_relative() {
                cfg.field.artifact = Some(dir.join(a));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Multistep weights from `order` or the explicit list.
    pub fn multistep_weights(&self) -> Vec<f64> {
        match &self.stepper.a {
            Some(a) => a.clone(),
            None => adams_bashforth(self.stepper.order.clamp(1, 4)),
        }
    }

    /// Validates everything and builds runtime objects. All violations are
    /// reported together.
    pub fn resolve<T: Real>(&self) -> Result<Resolved<T>> {
        let mut issues = Vec::new();
        let c = &self.cover;
        let dim = c.omega_lo.len();
        let omega = Rect::new(c.omega_lo.iter().map(|v| T::lit(*v)).collect(), c.omega_hi.iter().map(|v| T::lit(*v)).collect())
            .map_err(|e| issues.push(format!("cover.omega: {e}")))
            .ok();

        let f = &self.field;
        if f.grid_points < 2 && f.artifact.is_none() {
            issues.push("field.grid_points must be >= 2".into());
        }
        if !(f.noise_std >= 0.0) {
            issues.push("field.noise_std must be >= 0".into());
        }
        let field_kernel = KernelSpec::new(f.family, T::lit(f.sigma), T::lit(f.ell), dim.max(1))
            .map_err(|e| issues.push(format!("field: {e}")))
            .ok();

        let cover = omega.as_ref().and_then(|omega| {
            let built = match c.layout {
                CoverLayout::Orthants => {
                    if !c.subdomains.is_empty() {
                        issues.push("cover.subdomains requires layout = \"explicit\"".into());
                    }
                    Cover::orthants(omega.clone(), T::lit(c.overlap))
                }
                CoverLayout::Explicit => c
                    .subdomains
                    .iter()
                    .map(|r| Rect::new(r.lo.iter().map(|v| T::lit(*v)).collect(), r.hi.iter().map(|v| T::lit(*v)).collect()))
                    .collect::<Result<Vec<_>>>()
                    .and_then(|subs| Cover::new(omega.clone(), subs)),
            };
            built.map_err(|e| issues.push(format!("cover: {e}"))).ok()
        });

        let pou = cover.and_then(|cover| match self.pou.kind {
            PouKindName::OverlapAverage => Some(PartitionOfUnity::overlap_average(cover)),
            PouKindName::CustomTable => {
                let table = self
                    .pou
                    .table
                    .iter()
                    .map(|r| PouTableEntry {
                        members: r.members.iter().map(|m| m.wrapping_sub(1)).collect(),
                        weights: r.weights.iter().map(|w| T::lit(*w)).collect(),
                    })
                    .collect();
                PartitionOfUnity::custom_table(cover, table).map_err(|e| issues.push(format!("pou: {e}"))).ok()
            }
        });

        let s = &self.stepper;
        if s.a.is_none() && !(1..=4).contains(&s.order) {
            issues.push("stepper.order must be in 1..=4 (or give stepper.a)".into());
        }
        let stepper = StepperConfig {
            gamma: T::lit(s.gamma),
            h: T::lit(s.h),
            a: self.multistep_weights().into_iter().map(T::lit).collect(),
            preconditioned: s.preconditioned,
            epsilon_bar: T::lit(s.epsilon_bar),
        };
        issues.extend(stepper.validate());

        let e = &self.estimator;
        if !(e.scale > 0.0) {
            issues.push("estimator.scale must be > 0".into());
        }
        let estimator = KernelSpec::new(
            e.family.unwrap_or(f.family),
            T::lit(e.sigma.unwrap_or(f.sigma * e.scale)),
            T::lit(e.ell.unwrap_or(f.ell * e.scale)),
            dim.max(1),
        )
        .map_err(|err| issues.push(format!("estimator: {err}")))
        .ok();

        let sim = &self.sim;
        if sim.resolutions.is_empty() {
            issues.push("sim.resolutions must not be empty".into());
        }
        if sim.resolutions.iter().any(|r| !(*r > 0.0)) {
            issues.push("sim.resolutions must be positive".into());
        }
        if sim.resolutions.windows(2).any(|w| !(w[1] < w[0])) {
            issues.push("sim.resolutions must be strictly decreasing".into());
        }
        if sim.eval_grid_points < 2 {
            issues.push("sim.eval_grid_points must be >= 2".into());
        }
        if !(sim.fill_resolution > 0.0) {
            issues.push("sim.fill_resolution must be > 0".into());
        }
        if sim.initial_samples == 0 {
            issues.push("sim.initial_samples must be >= 1".into());
        }
        if sim.center_budget == Some(0) {
            issues.push("sim.center_budget must be >= 1".into());
        }

        match (omega, field_kernel, pou, estimator) {
            (Some(omega), Some(kernel), Some(pou), Some(estimator)) if issues.is_empty() => Ok(Resolved {
                field: FieldSpec {
                    kernel,
                    grid: omega.grid_with_counts(&vec![f.grid_points; dim]),
                    seed: f.seed,
                    noise_std: T::lit(f.noise_std),
                },
                field_artifact: f.artifact.clone(),
                pou,
                stepper,
                estimator,
                resolutions: sim.resolutions.iter().map(|r| T::lit(*r)).collect(),
                eval_grid_points: sim.eval_grid_points,
                fill_resolution: T::lit(sim.fill_resolution),
                fuse_every: sim.fuse_every,
                initial_samples: sim.initial_samples,
                center_budget: sim.center_budget,
                parallel: sim.parallel,
            }),
            _ => Err(Error::Config(issues)),
        }
    }

    /// Stable identifier: SHA-256 over the serialized config, first 16 hex digits.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Record of what produced a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub config: SimConfig,
}

impl RunManifest {
    pub fn new(config: SimConfig, config_path: Option<PathBuf>, out_dir: PathBuf) -> Self {
        Self { run_id: config.run_id(), config_path, out_dir, config }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}
