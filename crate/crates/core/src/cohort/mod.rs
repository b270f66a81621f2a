//! Multi-modal subject data model: connectivity vectors, volumes, cohorts
//! with missing modalities, synthetic generation and fold splitting.

mod folds;
mod io;
mod synth;

pub use folds::stratified_kfold;
pub use io::{load_cohort, load_nifti, save_cohort, save_nifti};
pub use synth::{generate_synthetic_cohort, GroundTruth, SyntheticSpec};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattened upper triangle (row-major, diagonal excluded) of a symmetric
/// component-correlation matrix; entries in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityVector {
    values: Vec<f64>,
    n_components: usize,
}

impl ConnectivityVector {
    pub fn new(values: Vec<f64>, n_components: usize) -> Result<Self> {
        let expect = n_components * (n_components.saturating_sub(1)) / 2;
        if values.len() != expect {
            return Err(Error::InvalidConnectivity(format!(
                "length {} does not match C={} (expected {})",
                values.len(),
                n_components,
                expect
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidConnectivity(format!(
                "entry {v} outside [-1, 1]"
            )));
        }
        Ok(ConnectivityVector {
            values,
            n_components,
        })
    }

    /// Build from a flat vector, inferring C from the triangular length.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        let c = components_for_len(values.len()).ok_or_else(|| {
            Error::InvalidConnectivity(format!(
                "length {} is not a triangular number C*(C-1)/2",
                values.len()
            ))
        })?;
        ConnectivityVector::new(values, c)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Solve F = C*(C-1)/2 for C, if F is triangular.
pub fn components_for_len(len: usize) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let c = (1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0;
    let c = c.round() as usize;
    if c >= 2 && c * (c - 1) / 2 == len {
        Some(c)
    } else {
        None
    }
}

/// Row-major upper-triangle flattening (diagonal excluded) of a symmetric
/// matrix. Symmetry is checked to 1e-6; entries must lie in [-1, 1].
pub fn vectorize_upper_triangle(matrix: &Array2<f64>) -> Result<ConnectivityVector> {
    let (r, c) = matrix.dim();
    if r != c || r < 2 {
        return Err(Error::InvalidConnectivity(format!(
            "matrix must be square with C >= 2, got {r}x{c}"
        )));
    }
    for i in 0..r {
        for j in (i + 1)..r {
            if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-6 {
                return Err(Error::InvalidConnectivity(format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut values = Vec::with_capacity(r * (r - 1) / 2);
    for i in 0..r {
        for j in (i + 1)..r {
            values.push(matrix[[i, j]]);
        }
    }
    ConnectivityVector::new(values, r)
}

/// Inverse of `vectorize_upper_triangle`; diagonal set to 1.
pub fn devectorize(vec: &ConnectivityVector) -> Array2<f64> {
    let c = vec.n_components;
    let mut m = Array2::from_elem((c, c), 1.0);
    let mut idx = 0;
    for i in 0..c {
        for j in (i + 1)..c {
            m[[i, j]] = vec.values[idx];
            m[[j, i]] = vec.values[idx];
            idx += 1;
        }
    }
    m
}

/// 3-D intensity grid normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    voxels: Array3<f64>,
}

impl Volume {
    pub fn new(voxels: Array3<f64>) -> Result<Self> {
        if let Some(v) = voxels.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidVolume(format!("voxel {v} outside [-1, 1]")));
        }
        Ok(Volume { voxels })
    }

    pub fn voxels(&self) -> &Array3<f64> {
        &self.voxels
    }

    pub fn shape(&self) -> [usize; 3] {
        let d = self.voxels.dim();
        [d.0, d.1, d.2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    Cn,
    Ad,
}

impl Diagnosis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Diagnosis::Cn => "CN",
            Diagnosis::Ad => "AD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" => Ok(Diagnosis::Cn),
            "AD" => Ok(Diagnosis::Ad),
            other => Err(Error::InvalidCohort(format!("unknown diagnosis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub fnc: Option<ConnectivityVector>,
    pub t1: Option<Volume>,
}

impl SubjectRecord {
    pub fn is_paired(&self) -> bool {
        self.fnc.is_some() && self.t1.is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<SubjectRecord>,
    fnc_dim: usize,
    volume_shape: [usize; 3],
}

impl Cohort {
    pub fn new(
        records: Vec<SubjectRecord>,
        fnc_dim: usize,
        volume_shape: [usize; 3],
    ) -> Result<Self> {
        for r in &records {
            if r.fnc.is_none() && r.t1.is_none() {
                return Err(Error::InvalidCohort(format!(
                    "subject {} has no modality",
                    r.subject_id
                )));
            }
            if let Some(f) = &r.fnc {
                if f.len() != fnc_dim {
                    return Err(Error::InvalidCohort(format!(
                        "subject {}: FNC length {} != {}",
                        r.subject_id,
                        f.len(),
                        fnc_dim
                    )));
                }
            }
            if let Some(v) = &r.t1 {
                if v.shape() != volume_shape {
                    return Err(Error::InvalidCohort(format!(
                        "subject {}: volume shape {:?} != {:?}",
                        r.subject_id,
                        v.shape(),
                        volume_shape
                    )));
                }
            }
        }
        Ok(Cohort {
            records,
            fnc_dim,
            volume_shape,
        })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn fnc_dim(&self) -> usize {
        self.fnc_dim
    }

    pub fn volume_shape(&self) -> [usize; 3] {
        self.volume_shape
    }

    pub fn n_components(&self) -> usize {
        components_for_len(self.fnc_dim).expect("cohort fnc_dim is triangular")
    }

    /// Paired subset: records with both modalities, in record order.
    pub fn paired(&self) -> Vec<&SubjectRecord> {
        self.records.iter().filter(|r| r.is_paired()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.records.iter().all(|r| r.is_paired())
    }

    /// Sub-cohort restricted to the given subject ids (record order kept).
    pub fn subset(&self, ids: &[String]) -> Result<Cohort> {
        let idset: std::collections::HashSet<&str> = ids.iter().map(|s| s.as_str()).collect();
        let records: Vec<SubjectRecord> = self
            .records
            .iter()
            .filter(|r| idset.contains(r.subject_id.as_str()))
            .cloned()
            .collect();
        if records.len() != ids.len() {
            return Err(Error::InvalidCohort(
                "subset ids not all present in cohort".into(),
            ));
        }
        Cohort::new(records, self.fnc_dim, self.volume_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vectorize_smallest_case() {
        let m = array![[1.0, 0.1, 0.2], [0.1, 1.0, 0.3], [0.2, 0.3, 1.0]];
        let v = vectorize_upper_triangle(&m).unwrap();
        assert_eq!(v.values(), &[0.1, 0.2, 0.3]);
        assert_eq!(v.n_components(), 3);
    }

    #[test]
    fn vectorize_lengths() {
        // C=53 -> 1378; C=5 -> 10
        assert_eq!(53 * 52 / 2, 1378);
        let m = Array2::from_elem((5, 5), 0.0);
        assert_eq!(vectorize_upper_triangle(&m).unwrap().len(), 10);
        let m = Array2::from_elem((53, 53), 0.0);
        assert_eq!(vectorize_upper_triangle(&m).unwrap().len(), 1378);
    }

    #[test]
    fn vectorize_rejects_asymmetry_and_range() {
        let m = array![[1.0, 0.1], [0.3, 1.0]];
        assert!(vectorize_upper_triangle(&m).is_err());
        let m = array![[1.0, 1.5], [1.5, 1.0]];
        assert!(vectorize_upper_triangle(&m).is_err());
    }

    #[test]
    fn devectorize_inverse() {
        let v = ConnectivityVector::from_flat(vec![0.1, 0.2, 0.3]).unwrap();
        let m = devectorize(&v);
        assert_eq!(m[[0, 1]], 0.1);
        assert_eq!(m[[0, 2]], 0.2);
        assert_eq!(m[[1, 2]], 0.3);
        assert_eq!(m[[1, 0]], 0.1);
        for i in 0..3 {
            assert_eq!(m[[i, i]], 1.0);
        }
    }

    #[test]
    fn non_triangular_length_rejected() {
        assert!(ConnectivityVector::from_flat(vec![0.0; 7]).is_err());
        assert_eq!(components_for_len(1378), Some(53));
        assert_eq!(components_for_len(10), Some(5));
        assert_eq!(components_for_len(7), None);
    }

    #[test]
    fn record_needs_a_modality() {
        let rec = SubjectRecord {
            subject_id: "s1".into(),
            diagnosis: Diagnosis::Cn,
            fnc: None,
            t1: None,
        };
        assert!(Cohort::new(vec![rec], 3, [2, 2, 2]).is_err());
    }
}
