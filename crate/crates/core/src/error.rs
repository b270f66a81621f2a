use thiserror::Error;

/// Errors surfaced by cohort construction, model evaluation, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid connectivity vector: {0}")]
    InvalidConnectivity(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("shape propagation failed at layer {layer}: {reason}")]
    ShapeMismatch { layer: usize, reason: String },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("stratified fold error: {0}")]
    Stratification(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}: {component}")]
    Diverged { epoch: usize, component: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("nifti error: {0}")]
    Nifti(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
