use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{vectorize_upper_triangle, Cohort, Diagnosis, SubjectRecord, Volume};
use crate::error::{Error, Result};

/// Recipe for a desk-scale synthetic cohort with a known cross-modal
/// mapping. Generation is a pure function of the spec: the same spec
/// yields a bit-identical cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cn: usize,
    pub n_ad: usize,
    /// Fraction of records (stratified by class) whose FNC is removed.
    pub missing_fnc_fraction: f64,
    pub n_components: usize,
    pub volume_shape: [usize; 3],
    pub latent_dim: usize,
    /// Amplitude of the AD-only volume deficit and of the FNC pair offsets.
    pub effect_size: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_cn: 100,
            n_ad: 100,
            missing_fnc_fraction: 0.3,
            n_components: 8,
            volume_shape: [16, 16, 16],
            latent_dim: 4,
            effect_size: 0.3,
            noise_sigma: 0.1,
            seed: 7,
        }
    }
}

/// What the generator injected: where the atrophy lives, which FNC pairs
/// carry class offsets, and each subject's latent code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Half-open voxel index ranges [lo, hi) per axis.
    pub affected_region: [[usize; 2]; 3],
    /// Upper-triangle component pairs (i < j) carrying class offsets.
    pub affected_pairs: Vec<(usize, usize)>,
    /// Per-subject latent codes, in record order.
    pub latents: Vec<(String, Vec<f64>)>,
}

impl GroundTruth {
    pub fn region_contains(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| idx[a] >= self.affected_region[a][0] && idx[a] < self.affected_region[a][1])
    }
}

/// Amplitude of the latent-driven smooth volume structure.
const Z_VOLUME_AMPLITUDE: f64 = 0.1;
/// Scale of the latent linear map feeding the connectivity matrix.
const Z_FNC_SCALE: f64 = 0.25;
/// Number of class-offset component pairs.
const N_AFFECTED_PAIRS: usize = 5;
/// Scale of the FNC channel's measurement noise relative to the volume's
/// noise_sigma.
const FNC_NOISE_FACTOR: f64 = 1.0;

struct Bases {
    template: Array3<f64>,
    z_maps: Vec<Array3<f64>>,
    region: [[usize; 2]; 3],
    fnc_weights: Array2<f64>, // (F, latent_dim)
    affected_pairs: Vec<(usize, usize)>,
}

fn gaussian_bump(shape: [usize; 3], center: [f64; 3], width: f64) -> Array3<f64> {
    Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(i, j, k)| {
        let p = [
            i as f64 / shape[0] as f64,
            j as f64 / shape[1] as f64,
            k as f64 / shape[2] as f64,
        ];
        let r2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
        (-r2 / (2.0 * width * width)).exp()
    })
}

fn build_bases(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Bases {
    let shape = spec.volume_shape;
    // Smooth anatomical stand-in: a central blob on a dark background.
    let mut template = gaussian_bump(shape, [0.5, 0.5, 0.5], 0.28);
    template.mapv_inplace(|v| 1.2 * v - 0.6);

    let mut z_maps = Vec::with_capacity(spec.latent_dim);
    for _ in 0..spec.latent_dim {
        let center = [
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
        ];
        let mut b = gaussian_bump(shape, center, 0.2);
        b.mapv_inplace(|v| v * Z_VOLUME_AMPLITUDE);
        z_maps.push(b);
    }

    // Fixed off-center box, 1/4 of each axis, where AD loses intensity.
    let region: [[usize; 2]; 3] = [
        [shape[0] * 5 / 8, shape[0] * 5 / 8 + shape[0] / 4],
        [shape[1] * 5 / 8, shape[1] * 5 / 8 + shape[1] / 4],
        [shape[2] * 5 / 8, shape[2] * 5 / 8 + shape[2] / 4],
    ];

    let c = spec.n_components;
    let f = c * (c - 1) / 2;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let fnc_weights = Array2::from_shape_fn((f, spec.latent_dim), |_| {
        normal.sample(rng) / (spec.latent_dim as f64).sqrt()
    });

    let mut all_pairs: Vec<(usize, usize)> = (0..c)
        .flat_map(|i| ((i + 1)..c).map(move |j| (i, j)))
        .collect();
    all_pairs.shuffle(rng);
    let mut affected_pairs: Vec<(usize, usize)> =
        all_pairs.into_iter().take(N_AFFECTED_PAIRS.min(f)).collect();
    affected_pairs.sort_unstable();

    Bases {
        template,
        z_maps,
        region,
        fnc_weights,
        affected_pairs,
    }
}

fn pair_index(c: usize, i: usize, j: usize) -> usize {
    // Row-major upper-triangle offset of (i, j), i < j.
    i * c - i * (i + 1) / 2 + (j - i - 1)
}

fn synth_volume(
    spec: &SyntheticSpec,
    bases: &Bases,
    z: &[f64],
    diagnosis: Diagnosis,
    rng: &mut ChaCha8Rng,
) -> Volume {
    let mut vox = bases.template.clone();
    for (zj, map) in z.iter().zip(&bases.z_maps) {
        vox.scaled_add(*zj, map);
    }
    if diagnosis == Diagnosis::Ad {
        let r = bases.region;
        for i in r[0][0]..r[0][1] {
            for j in r[1][0]..r[1][1] {
                for k in r[2][0]..r[2][1] {
                    vox[[i, j, k]] -= spec.effect_size;
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).unwrap();
        vox.mapv_inplace(|v| v + normal.sample(rng));
    }
    vox.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Volume::new(vox).expect("clamped voxels are in range")
}

fn synth_fnc(
    spec: &SyntheticSpec,
    bases: &Bases,
    z: &[f64],
    diagnosis: Diagnosis,
    rng: &mut ChaCha8Rng,
) -> crate::cohort::ConnectivityVector {
    let c = spec.n_components;
    let f = c * (c - 1) / 2;
    let mut raw = vec![0.0; f];
    for (p, r) in raw.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (d, zd) in z.iter().enumerate() {
            acc += bases.fnc_weights[[p, d]] * zd;
        }
        *r = Z_FNC_SCALE * acc;
    }
    // Per-entry measurement noise, scaled up relative to the voxel channel.
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, FNC_NOISE_FACTOR * spec.noise_sigma).unwrap();
        for r in raw.iter_mut() {
            *r += normal.sample(rng);
        }
    }
    if diagnosis == Diagnosis::Ad {
        for (rank, (i, j)) in bases.affected_pairs.iter().enumerate() {
            // Alternate increases and decreases across the affected pairs.
            let sign = if rank % 2 == 0 { 1.0 } else { -1.0 };
            raw[pair_index(c, *i, *j)] += sign * spec.effect_size;
        }
    }
    let mut m = Array2::from_elem((c, c), 1.0);
    let mut idx = 0;
    for i in 0..c {
        for j in (i + 1)..c {
            let v = raw[idx].tanh();
            m[[i, j]] = v;
            m[[j, i]] = v;
            idx += 1;
        }
    }
    vectorize_upper_triangle(&m).expect("tanh keeps entries in range")
}

/// Generate a cohort plus the ground truth describing the injected effects.
pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<(Cohort, GroundTruth)> {
    if spec.n_cn == 0 || spec.n_ad == 0 {
        return Err(Error::InvalidSpec("class counts must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.missing_fnc_fraction) {
        return Err(Error::InvalidSpec(
            "missing_fnc_fraction must lie in [0, 1]".into(),
        ));
    }
    if spec.n_components < 2 || spec.latent_dim == 0 || spec.volume_shape.contains(&0) {
        return Err(Error::InvalidSpec(
            "n_components >= 2, latent_dim >= 1, nonzero volume shape required".into(),
        ));
    }
    if spec.effect_size < 0.0 || spec.noise_sigma < 0.0 {
        return Err(Error::InvalidSpec(
            "effect_size and noise_sigma must be nonnegative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bases = build_bases(spec, &mut rng);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut records = Vec::with_capacity(spec.n_cn + spec.n_ad);
    let mut latents = Vec::new();
    for (diag, count, prefix) in [
        (Diagnosis::Cn, spec.n_cn, "cn"),
        (Diagnosis::Ad, spec.n_ad, "ad"),
    ] {
        for s in 0..count {
            let id = format!("{prefix}-{s:04}");
            let z: Vec<f64> = (0..spec.latent_dim).map(|_| normal.sample(&mut rng)).collect();
            let t1 = synth_volume(spec, &bases, &z, diag, &mut rng);
            let fnc = synth_fnc(spec, &bases, &z, diag, &mut rng);
            latents.push((id.clone(), z));
            records.push(SubjectRecord {
                subject_id: id,
                diagnosis: diag,
                fnc: Some(fnc),
                t1: Some(t1),
            });
        }
    }

    // Remove FNC from a stratified, seeded selection of records.
    for (diag, count) in [(Diagnosis::Cn, spec.n_cn), (Diagnosis::Ad, spec.n_ad)] {
        let n_missing = (spec.missing_fnc_fraction * count as f64).round() as usize;
        let mut idxs: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.diagnosis == diag)
            .map(|(i, _)| i)
            .collect();
        idxs.shuffle(&mut rng);
        for &i in idxs.iter().take(n_missing.min(count)) {
            records[i].fnc = None;
        }
    }

    let f = spec.n_components * (spec.n_components - 1) / 2;
    let cohort = Cohort::new(records, f, spec.volume_shape)?;
    Ok((
        cohort,
        GroundTruth {
            affected_region: bases.region,
            affected_pairs: bases.affected_pairs,
            latents,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_count_matches_table_shape() {
        let spec = SyntheticSpec {
            n_cn: 207,
            n_ad: 207,
            missing_fnc_fraction: 0.0,
            volume_shape: [6, 6, 6],
            n_components: 4,
            ..Default::default()
        };
        let (cohort, _) = generate_synthetic_cohort(&spec).unwrap();
        assert_eq!(cohort.paired().len(), 414);
    }

    #[test]
    fn full_missingness_empties_paired_set() {
        let spec = SyntheticSpec {
            n_cn: 10,
            n_ad: 10,
            missing_fnc_fraction: 1.0,
            volume_shape: [6, 6, 6],
            n_components: 4,
            ..Default::default()
        };
        let (cohort, _) = generate_synthetic_cohort(&spec).unwrap();
        assert!(cohort.paired().is_empty());
        // every record still has T1
        assert!(cohort.records().iter().all(|r| r.t1.is_some()));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            n_cn: 8,
            n_ad: 8,
            volume_shape: [8, 8, 8],
            n_components: 5,
            ..Default::default()
        };
        let (a, ga) = generate_synthetic_cohort(&spec).unwrap();
        let (b, gb) = generate_synthetic_cohort(&spec).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(ga.affected_pairs, gb.affected_pairs);
        assert_eq!(ga.latents, gb.latents);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSpec::default();
        spec.n_cn = 0;
        assert!(generate_synthetic_cohort(&spec).is_err());
        let mut spec = SyntheticSpec::default();
        spec.missing_fnc_fraction = 1.5;
        assert!(generate_synthetic_cohort(&spec).is_err());
    }

    #[test]
    fn pair_index_is_row_major_upper() {
        // C=4: pairs (0,1)(0,2)(0,3)(1,2)(1,3)(2,3)
        assert_eq!(pair_index(4, 0, 1), 0);
        assert_eq!(pair_index(4, 0, 3), 2);
        assert_eq!(pair_index(4, 1, 2), 3);
        assert_eq!(pair_index(4, 2, 3), 5);
    }
}
