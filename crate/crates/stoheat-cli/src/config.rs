//! Per-command JSON configuration documents.
//!
//! One document fully determines one run (no layered overrides); the same
//! document is echoed back as the metadata sidecar of every artifact, so a
//! run can be reproduced from its outputs alone.

use serde::{Deserialize, Serialize};
use stoheat::estimator::{AnchorMode, BumpFunction, Direction, FieldKind};
use stoheat::measure::InitialMeasure;
use stoheat::moments::RhoSpec;
use stoheat::quad::QuadratureSpec;
use stoheat::simulate::GridSpec;

fn default_batch() -> usize {
    512
}

/// Which moment quantity a sweep evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentKind {
    /// Exact second moment for a quasi-linear coefficient.
    ExactSecond,
    /// Upper bound on the squared p-norm, even `p >= 2`.
    PUpper { p: u32 },
    /// Closed-form second moment of the stochastic convolution for
    /// point-mass data at the origin.
    DeltaI,
}

impl MomentKind {
    pub fn column_label(&self) -> String {
        match self {
            MomentKind::ExactSecond => "exact_second".into(),
            MomentKind::PUpper { p } => format!("p_upper_{p}"),
            MomentKind::DeltaI => "delta_i".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsConfig {
    pub measure: InitialMeasure,
    pub rho: RhoSpec,
    pub nu: f64,
    pub t_values: Vec<f64>,
    pub x_values: Vec<f64>,
    pub kinds: Vec<MomentKind>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub measure: InitialMeasure,
    pub rho: RhoSpec,
    pub grid: GridSpec,
    pub seed: u64,
    pub replicas: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderConfig {
    pub measure: InitialMeasure,
    pub rho: RhoSpec,
    pub grid: GridSpec,
    pub seed: u64,
    pub replicas: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub p: u32,
    pub field: FieldKind,
    pub direction: Direction,
    pub mode: AnchorMode,
    pub lags: Vec<f64>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLimitConfig {
    pub measure: InitialMeasure,
    pub rho: RhoSpec,
    pub grid: GridSpec,
    pub seed: u64,
    pub replicas: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub phi: BumpFunction,
    pub t_list: Vec<f64>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
}

/// Metadata sidecar written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta<C> {
    pub tool: String,
    pub version: String,
    pub run_id: String,
    pub config: C,
}

pub fn run_meta<C: Serialize + Clone>(config: &C) -> stoheat::Result<(String, RunMeta<C>)> {
    let canonical = serde_json::to_string(config)?;
    let id = stoheat::artifact::run_id(&canonical);
    Ok((
        id.clone(),
        RunMeta {
            tool: "stoheat".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            run_id: id,
            config: config.clone(),
        },
    ))
}
