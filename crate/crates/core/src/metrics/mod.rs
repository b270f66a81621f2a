//! Fidelity metrics for generated data, classification metrics, Welch
//! t-statistics and the significance annotation used in result tables.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cohort::{devectorize, ConnectivityVector, Diagnosis, Volume};
use crate::error::{Error, Result};

/// Mean squared error between same-shaped arrays.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "mse: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Metric("mse: empty input".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// Pearson correlation coefficient; errors on zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Metric(
            "pearson: inputs must have equal length >= 2".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Metric(
            "pearson: undefined for zero-variance input".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Peak signal-to-noise ratio in decibels; +inf when the inputs coincide.
pub fn psnr(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    if data_range <= 0.0 {
        return Err(Error::Metric("psnr: data_range must be positive".into()));
    }
    let m = mse(
        a.voxels().as_slice().unwrap(),
        b.voxels().as_slice().unwrap(),
    )?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Mean local SSIM over a sliding cubic window with uniform weighting and
/// stabilizers C1 = (0.01*range)^2, C2 = (0.03*range)^2. Local moments are
/// population (1/N) statistics.
pub fn ssim(a: &Volume, b: &Volume, data_range: f64, window: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Metric("ssim: shape mismatch".into()));
    }
    if window % 2 == 0 || window == 0 {
        return Err(Error::Metric("ssim: window must be odd".into()));
    }
    let dims = a.shape();
    if dims.iter().any(|&d| d < window) {
        return Err(Error::Metric(format!(
            "ssim: volume {dims:?} smaller than window {window}"
        )));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let av = a.voxels();
    let bv = b.voxels();
    let nw = (window * window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=(dims[0] - window) {
        for j in 0..=(dims[1] - window) {
            for k in 0..=(dims[2] - window) {
                let mut sa = 0.0;
                let mut sb = 0.0;
                let mut saa = 0.0;
                let mut sbb = 0.0;
                let mut sab = 0.0;
                for di in 0..window {
                    for dj in 0..window {
                        for dk in 0..window {
                            let x = av[[i + di, j + dj, k + dk]];
                            let y = bv[[i + di, j + dj, k + dk]];
                            sa += x;
                            sb += y;
                            saa += x * x;
                            sbb += y * y;
                            sab += x * y;
                        }
                    }
                }
                let mu_a = sa / nw;
                let mu_b = sb / nw;
                let var_a = saa / nw - mu_a * mu_a;
                let var_b = sbb / nw - mu_b * mu_b;
                let cov = sab / nw - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Welch two-sample t statistic: (mean_a - mean_b) / sqrt(s2a/na + s2b/nb)
/// with unbiased variances. A zero denominator yields 0 for equal means and
/// a signed infinity otherwise.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / (nb - 1.0);
    let denom = (va / na + vb / nb).sqrt();
    let diff = ma - mb;
    if denom == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    } else {
        diff / denom
    }
}

/// Welch–Satterthwaite two-sided p-value for the difference of means.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Metric("welch test needs >= 2 samples per group".into()));
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / (nb - 1.0);
    if va == 0.0 && vb == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / (va / na + vb / nb).sqrt();
    let df = (va / na + vb / nb).powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Metric(format!("t distribution: {e}")))?;
    Ok(2.0 * dist.cdf(-t.abs()))
}

/// Two-sided critical |t| at familywise level `alpha` Bonferroni-corrected
/// over `n_tests` comparisons.
pub fn t_critical_bonferroni(alpha: f64, df: f64, n_tests: usize) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Metric(format!("t distribution: {e}")))?;
    let a = alpha / n_tests as f64;
    Ok(dist.inverse_cdf(1.0 - a / 2.0))
}

/// Voxelwise Welch t-map between two groups of volumes (group_a - group_b).
pub fn volume_tmap(group_a: &[&Volume], group_b: &[&Volume]) -> Result<Array3<f64>> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::Metric("volume_tmap needs >= 2 volumes per group".into()));
    }
    let shape = group_a[0].shape();
    for v in group_a.iter().chain(group_b.iter()) {
        if v.shape() != shape {
            return Err(Error::Metric("volume_tmap: shape mismatch".into()));
        }
    }
    let mut out = Array3::zeros((shape[0], shape[1], shape[2]));
    let mut abuf = vec![0.0; group_a.len()];
    let mut bbuf = vec![0.0; group_b.len()];
    for i in 0..shape[0] {
        for j in 0..shape[1] {
            for k in 0..shape[2] {
                for (s, v) in group_a.iter().enumerate() {
                    abuf[s] = v.voxels()[[i, j, k]];
                }
                for (s, v) in group_b.iter().enumerate() {
                    bbuf[s] = v.voxels()[[i, j, k]];
                }
                out[[i, j, k]] = welch_t(&abuf, &bbuf);
            }
        }
    }
    Ok(out)
}

/// Elementwise mean(group_a) - mean(group_b) of connectivity vectors, plus
/// the devectorized matrix form for display.
pub fn fnc_group_difference(
    group_a: &[&ConnectivityVector],
    group_b: &[&ConnectivityVector],
) -> Result<(Vec<f64>, Array2<f64>)> {
    let first = group_a
        .first()
        .or_else(|| group_b.first())
        .ok_or_else(|| Error::Metric("fnc_group_difference: empty groups".into()))?;
    let f = first.len();
    let c = first.n_components();
    for v in group_a.iter().chain(group_b.iter()) {
        if v.len() != f {
            return Err(Error::Metric("fnc_group_difference: length mismatch".into()));
        }
    }
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Metric("fnc_group_difference: empty group".into()));
    }
    let mut diff = vec![0.0; f];
    for (p, d) in diff.iter_mut().enumerate() {
        let ma = group_a.iter().map(|v| v.values()[p]).sum::<f64>() / group_a.len() as f64;
        let mb = group_b.iter().map(|v| v.values()[p]).sum::<f64>() / group_b.len() as f64;
        *d = ma - mb;
    }
    // Matrix form for plotting: differences mirrored, zero diagonal.
    let halfscale: Vec<f64> = diff.clone();
    let cv = ConnectivityVector::new(
        halfscale.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        c,
    )
    .map_err(|e| Error::Metric(format!("fnc_group_difference: {e}")))?;
    let mut m = devectorize(&cv);
    for i in 0..c {
        m[[i, i]] = 0.0;
    }
    Ok((diff, m))
}

/// Per-fold classification metrics with AD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when precision or F1 had an empty denominator and was reported
    /// as 0 by convention.
    pub degenerate: bool,
}

pub fn classification_metrics(
    truth: &[Diagnosis],
    predicted: &[Diagnosis],
) -> Result<ClassificationMetrics> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::Metric(
            "classification_metrics: label lists must be nonempty and equal length".into(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fnn = 0usize;
    for (t, p) in truth.iter().zip(predicted) {
        match (t, p) {
            (Diagnosis::Ad, Diagnosis::Ad) => tp += 1,
            (Diagnosis::Cn, Diagnosis::Ad) => fp += 1,
            (Diagnosis::Cn, Diagnosis::Cn) => tn += 1,
            (Diagnosis::Ad, Diagnosis::Cn) => fnn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / truth.len() as f64;
    let mut degenerate = false;
    let precision = if tp + fp == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnn == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// Star tiers for two-sample comparisons, boundary-inclusive as printed:
/// ns p>0.05, * 0.01<p<=0.05, ** 0.001<p<=0.01, *** p<=0.001.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    Ns,
    One,
    Two,
    Three,
}

impl Stars {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stars::Ns => "ns",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceAnnotation {
    pub p_value: f64,
    pub stars: Stars,
}

pub fn stars_for_p(p: f64) -> Stars {
    if p > 0.05 {
        Stars::Ns
    } else if p > 0.01 {
        Stars::One
    } else if p > 0.001 {
        Stars::Two
    } else {
        Stars::Three
    }
}

/// Welch t-test over per-fold metric samples, annotated with star tiers.
pub fn annotate_significance(sample_a: &[f64], sample_b: &[f64]) -> Result<SignificanceAnnotation> {
    let p = welch_p_value(sample_a, sample_b)?;
    Ok(SignificanceAnnotation {
        p_value: p,
        stars: stars_for_p(p),
    })
}

/// Mean and sample standard deviation (n-1 normalization; 0 for n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityReport {
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub pearson_mean: f64,
    pub pearson_std: f64,
}
