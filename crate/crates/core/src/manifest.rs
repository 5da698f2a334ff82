//! Experiment manifests: one JSON document describing what to run.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "seeds": [42, 43, 44, 45, 46],
//!   "experiment": { "kind": "fl_run", "config": { "rounds": 3 } }
//! }
//! ```
//!
//! Every config struct fills missing fields from its defaults, so a
//! manifest only needs to state what differs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::attacks::OverfitConfig;
pub use crate::convergence::ConvergenceConfig;
use crate::dp::{DpConfig, QUOTED_INTERMEDIATE};
use crate::fl::{FlConfig, Mechanisms};
use crate::he::{CkksParams, PackingConfig, SlotModel};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Output root; the CLI flag and environment variable take precedence.
    #[serde(default)]
    pub output_dir: Option<String>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum Experiment {
    FlRun(FlConfig),
    Ablation(AblationConfig),
    Accounting(AccountingConfig),
    Mia(MiaConfig),
    Convergence(ConvergenceConfig),
    SparsitySweep(SweepConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::FlRun(_) => "fl_run",
            Experiment::Ablation(_) => "ablation",
            Experiment::Accounting(_) => "accounting",
            Experiment::Mia(_) => "mia",
            Experiment::Convergence(_) => "convergence",
            Experiment::SparsitySweep(_) => "sparsity_sweep",
        }
    }

    /// Kinds that aggregate over seeds.
    pub fn is_statistical(&self) -> bool {
        !matches!(self, Experiment::Accounting(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub base: FlConfig,
    /// Variants to run; empty means the standard set from
    /// [`standard_ablations`].
    pub variants: Vec<AblationVariant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { base: FlConfig::default(), variants: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationVariant {
    pub name: String,
    pub mechanisms: Mechanisms,
}

/// Full pipeline and each single-mechanism removal.
pub fn standard_ablations() -> Vec<AblationVariant> {
    let full = Mechanisms::full();
    let v = |name: &str, m: Mechanisms| AblationVariant { name: name.into(), mechanisms: m };
    vec![
        v("full", full),
        v("no_error_feedback", Mechanisms { error_feedback: false, ..full }),
        v("no_adaptive_threshold", Mechanisms { adaptive_threshold: false, ..full }),
        v("no_packing", Mechanisms { packing: false, ..full }),
        v("no_encryption", Mechanisms { encryption: false, ..full }),
        v(
            "no_sparsification",
            Mechanisms { sparsification: false, error_feedback: false, adaptive_threshold: false, ..full },
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountingConfig {
    pub d: u64,
    pub sparsity: f64,
    pub n_clients: u64,
    pub params: CkksParams,
    pub packing: PackingConfig,
    pub slot_model: SlotModel,
    /// Privacy setting whose ε is reported alongside the byte counts.
    pub privacy: DpConfig,
    pub quoted_intermediate: Option<f64>,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self {
            d: crate::accounting::REFERENCE_D,
            sparsity: 0.9,
            n_clients: 5,
            params: CkksParams::reference(),
            packing: PackingConfig { lanes: 64, ..PackingConfig::default() },
            slot_model: SlotModel::FullRing,
            privacy: DpConfig { rounds: 3, ..DpConfig::default() },
            quoted_intermediate: Some(QUOTED_INTERMEDIATE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    /// Private pipeline whose global model is attacked.
    pub fl: FlConfig,
    pub overfit: OverfitConfig,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self { fl: FlConfig::default(), overfit: OverfitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base: FlConfig,
    pub grid: Vec<f64>,
    /// Model size for the analytic upload column, computed at N = 8192
    /// with 64 values per slot rather than the run's own HE settings.
    pub accounting_d: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { base: FlConfig::default(), grid: vec![0.5, 0.8, 0.9, 0.95, 0.99], accounting_d: crate::accounting::REFERENCE_D }
    }
}

impl Manifest {
    /// Parses and validates. Syntax and type errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("manifest line {}, column {}: {e}", e.line(), e.column())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.experiment.is_statistical() && self.seeds.is_empty() {
            return Err(Error::config(format!("field `seeds` must be non-empty for kind {}", self.experiment.kind())));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("field `seeds` contains duplicates"));
        }
        let ctx = |field: &str, e: Error| {
            let path = if field.is_empty() { "experiment.config".to_string() } else { format!("experiment.config.{field}") };
            Error::config(format!("{path}: {e}"))
        };
        match &self.experiment {
            Experiment::FlRun(c) => c.validate().map_err(|e| ctx("", e)),
            Experiment::Ablation(a) => a.base.validate().map_err(|e| ctx("base", e)),
            Experiment::Accounting(a) => {
                if !(0.0..=1.0).contains(&a.sparsity) || a.packing.lanes == 0 {
                    return Err(Error::config("experiment.config: sparsity must lie in [0, 1] and lanes >= 1"));
                }
                a.privacy.validate().map_err(|e| ctx("privacy", e))?;
                a.params.validate().map_err(|e| ctx("params", e))
            }
            Experiment::Mia(m) => {
                m.fl.validate().map_err(|e| ctx("fl", e))?;
                if m.overfit.architecture.inputs() != m.fl.data.n_features || m.overfit.n_train < 2 {
                    return Err(Error::config("experiment.config.overfit: architecture must match data and n_train >= 2"));
                }
                Ok(())
            }
            Experiment::Convergence(c) => c.validate().map_err(|e| ctx("", e)),
            Experiment::SparsitySweep(s) => {
                if s.grid.is_empty() || s.grid.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::config("experiment.config.grid: non-empty list of values in [0, 1]"));
                }
                s.base.validate().map_err(|e| ctx("base", e))
            }
        }
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// JSON Schema for manifests.
pub const SCHEMA: &str = include_str!("../../../docs/manifest.schema.json");
