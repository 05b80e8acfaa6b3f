use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lvhg_core::corrector::{GeneratorOptions, McSettings};
use lvhg_core::ergodic::GapSettings;
use lvhg_core::periodic::CoefficientSpec;
use lvhg_core::sim::SimConfig;
use lvhg_core::stable::NoiseSpec;
use lvhg_core::verify::SweepSettings;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// Everything one experiment needs, read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub noise: NoiseSpec,
    pub coefficients: CoefficientSpec,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant: Option<InvariantSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector: Option<CorrectorSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySettings>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PiSource {
    Occupation,
    GridChain,
    #[default]
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantSettings {
    /// Cells per axis of the histograms.
    pub m: usize,
    pub occupation: OccupationBudget,
    pub grid_chain: GridChainBudget,
    /// Estimate written to `invariant.json` for later commands.
    #[serde(default)]
    pub use_for_downstream: PiSource,
    /// Grid of the generator-based estimate.
    #[serde(default = "default_generator_m")]
    pub generator_m: usize,
}

fn default_generator_m() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationBudget {
    pub total_time: f64,
    pub burn_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridChainBudget {
    pub t0: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSettings {
    pub ns: Vec<u64>,
    pub n_paths: usize,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn one() -> f64 {
    1.0
}

fn default_slack() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSettings {
    /// Cells per axis of the PDE grid (a power of two).
    pub m: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub generator: GeneratorOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qv: Option<QvSettings>,
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QvSettings {
    pub ns: Vec<u64>,
    pub n_paths: usize,
    #[serde(default = "one")]
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    #[serde(flatten)]
    pub sweep: SweepSettings,
    /// Grid of π when no `invariant.json` is present.
    #[serde(default = "default_generator_m")]
    pub pi_m: usize,
    /// Store this many full paths of horizon `n_max t` as `paths.lvhg1`.
    #[serde(default)]
    pub save_paths: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| Failure::validation(format!("{e:#}")))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("config {}: {e}", path.display())).into())
    }

    /// SHA-256 of the canonical serialization (sorted keys, no whitespace).
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Simulation settings with the experiment seed.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig { seed: self.seed, ..self.sim.clone() }
    }
}
