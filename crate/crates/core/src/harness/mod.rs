//! Experiment orchestration: a cross-validated pipeline that trains one
//! translation GAN per fold, completes train/test portions with each
//! imputation strategy, trains a fusion classifier per strategy, and
//! aggregates classification, fidelity, and significance results into a
//! deterministic result document plus tables and plots.

mod plots;
mod run;
mod tables;

pub use plots::emit_plots;
pub use run::{run_experiment, ExperimentOutput, GeneratedGroups};
pub use tables::emit_tables;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierTrainConfig;
use crate::cohort::{load_cohort, Cohort, SyntheticSpec};
use crate::cyclegan::GanTrainConfig;
use crate::error::{Error, Result};
use crate::imputation::StrategyKind;
use crate::metrics::{ClassificationMetrics, FidelityReport, SignificanceAnnotation};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Where the experiment cohort comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CohortSource {
    Synthetic { spec: SyntheticSpec },
    Ingest {
        volume_dir: PathBuf,
        fnc_table: PathBuf,
        manifest: PathBuf,
    },
}

/// Network sizing: `desk` scales to the cohort's dimensions, `paper` is the
/// full-size architecture (1378-dim vectors, 121x145x121 volumes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    Desk,
    Paper,
}

fn default_k_folds() -> usize {
    5
}

fn default_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}

fn default_arch() -> ArchPreset {
    ArchPreset::Desk
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment_id: String,
    pub cohort: CohortSource,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_arch")]
    pub arch: ArchPreset,
    #[serde(default)]
    pub gan: GanTrainConfig,
    #[serde(default)]
    pub classifier: ClassifierTrainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Config(
                "experiment_id must be a nonempty [A-Za-z0-9_-]+ token".into(),
            ));
        }
        if self.k_folds < 2 {
            return Err(Error::Config("k_folds must be at least 2".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies list is empty".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, hex-encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolve the cohort: generate deterministically or ingest from disk.
    pub fn resolve_cohort(&self) -> Result<Cohort> {
        match &self.cohort {
            CohortSource::Synthetic { spec } => {
                Ok(crate::cohort::generate_synthetic_cohort(spec)?.0)
            }
            CohortSource::Ingest {
                volume_dir,
                fnc_table,
                manifest,
            } => load_cohort(volume_dir, fnc_table, manifest),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = crate::metrics::mean_std(values);
        MeanStd { mean, std }
    }
}

/// Aggregated classification performance of one strategy across folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    pub per_fold: Vec<ClassificationMetrics>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

impl StrategyReport {
    pub fn aggregate(strategy: StrategyKind, per_fold: Vec<ClassificationMetrics>) -> Self {
        let pick = |f: fn(&ClassificationMetrics) -> f64| {
            MeanStd::of(&per_fold.iter().map(f).collect::<Vec<_>>())
        };
        StrategyReport {
            accuracy: pick(|m| m.accuracy),
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            f1: pick(|m| m.f1),
            strategy,
            per_fold,
        }
    }
}

/// Fidelity of generated data on one fold's held-out paired records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldFidelity {
    pub fold: usize,
    /// Generated volumes (from real vectors) against real volumes.
    pub volume: FidelityReport,
    /// Generated vectors (from real volumes) against real vectors.
    pub fnc_mse: MeanStd,
    pub fnc_pearson: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseSignificance {
    pub strategy_a: StrategyKind,
    pub strategy_b: StrategyKind,
    pub metric: String,
    pub annotation: SignificanceAnnotation,
}

/// Reproducibility block. Wall-clock timestamps are deliberately excluded
/// (they live in the sidecar run log) so repeated runs produce identical
/// result documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub fold_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub version: u32,
    pub experiment_id: String,
    pub strategies: Vec<StrategyReport>,
    pub fidelity_per_fold: Vec<FoldFidelity>,
    /// Pooled over every held-out paired record across folds.
    pub fidelity_pooled: FidelityReport,
    pub significance: Vec<PairwiseSignificance>,
    pub provenance: Provenance,
}

/// Load a cohort saved by `save_cohort` (volumes/ + fnc.csv + manifest.csv).
pub fn load_cohort_dir(dir: &Path) -> Result<Cohort> {
    load_cohort(
        &dir.join("volumes"),
        &dir.join("fnc.csv"),
        &dir.join("manifest.csv"),
    )
}
