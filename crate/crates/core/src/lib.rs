//! Cross-modal generative imputation toolkit: cycle-consistent GAN
//! translation between functional connectivity vectors and structural
//! volumes, imputation strategies, a fusion classifier, fidelity and
//! classification metrics, and a cross-validated experiment harness.

pub mod classifier;
pub mod cohort;
pub mod cyclegan;
pub mod error;
pub mod harness;
pub mod imputation;
pub mod metrics;
pub mod nn;
pub mod seeds;
