//! Missing-modality strategies behind one interface: drop incomplete
//! records (subsample), fill the gap with zeros (the midpoint of the
//! normalized range), or synthesize it with a trained translation model.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ConnectivityVector, Diagnosis, Volume};
use crate::cyclegan::{impute_missing, GanModel};
use crate::error::{Error, Result};

/// Strategy name as it appears in configs and result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Subsample,
    ZeroFill,
    Generative,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Subsample => "subsample",
            StrategyKind::ZeroFill => "zero_fill",
            StrategyKind::Generative => "generative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "subsample" => Ok(StrategyKind::Subsample),
            "zero_fill" => Ok(StrategyKind::ZeroFill),
            "generative" => Ok(StrategyKind::Generative),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }

    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Subsample,
        StrategyKind::ZeroFill,
        StrategyKind::Generative,
    ];
}

/// A strategy ready to apply. The generative variant carries its model by
/// construction, so "generative without a model" cannot be represented.
pub enum ImputationStrategy<'a> {
    Subsample,
    ZeroFill,
    Generative(&'a GanModel),
}

impl ImputationStrategy<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            ImputationStrategy::Subsample => StrategyKind::Subsample,
            ImputationStrategy::ZeroFill => StrategyKind::ZeroFill,
            ImputationStrategy::Generative(_) => StrategyKind::Generative,
        }
    }
}

fn subsample(cohort: &Cohort) -> Result<Cohort> {
    let kept: Vec<_> = cohort
        .records()
        .iter()
        .filter(|r| r.is_paired())
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Imputation(
            "subsampling removed every record".into(),
        ));
    }
    let n_ad = kept.iter().filter(|r| r.diagnosis == Diagnosis::Ad).count();
    if n_ad == 0 || n_ad == kept.len() {
        return Err(Error::Imputation(
            "subsampling left a single-class cohort".into(),
        ));
    }
    Cohort::new(kept, cohort.fnc_dim(), cohort.volume_shape())
}

fn zero_fill(cohort: &Cohort) -> Result<Cohort> {
    let [d, h, w] = cohort.volume_shape();
    let mut records = Vec::with_capacity(cohort.records().len());
    for r in cohort.records() {
        let mut r = r.clone();
        if r.fnc.is_none() {
            r.fnc = Some(ConnectivityVector::from_flat(vec![0.0; cohort.fnc_dim()])?);
        }
        if r.t1.is_none() {
            r.t1 = Some(Volume::new(Array3::zeros((d, h, w)))?);
        }
        records.push(r);
    }
    Cohort::new(records, cohort.fnc_dim(), cohort.volume_shape())
}

/// Produce a complete cohort. Present values and labels are never altered;
/// applying the same strategy twice equals applying it once.
pub fn apply_strategy(strategy: &ImputationStrategy, cohort: &Cohort) -> Result<Cohort> {
    let out = match strategy {
        ImputationStrategy::Subsample => subsample(cohort)?,
        ImputationStrategy::ZeroFill => zero_fill(cohort)?,
        ImputationStrategy::Generative(model) => {
            if model.fnc_dim != cohort.fnc_dim() || model.volume_shape != cohort.volume_shape() {
                return Err(Error::Imputation(format!(
                    "model dims (F={}, {:?}) do not match cohort (F={}, {:?})",
                    model.fnc_dim,
                    model.volume_shape,
                    cohort.fnc_dim(),
                    cohort.volume_shape()
                )));
            }
            impute_missing(model, cohort)?
        }
    };
    debug_assert!(out.is_complete());
    Ok(out)
}
