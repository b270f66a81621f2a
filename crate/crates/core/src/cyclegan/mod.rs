//! Weakly-supervised cycle-consistent GAN between connectivity vectors and
//! volumes: generators G1 (FNC -> volume) and G2 (volume -> FNC),
//! discriminators D1 (volumes) and D2 (vectors), least-squares adversarial
//! losses, cycle/identity losses, replay buffers and the training loop.

mod buffer;
mod losses;
pub(crate) mod presets;
mod train;

pub use buffer::ReplayBuffer;
pub use losses::{
    adversarial_loss_d, adversarial_loss_g, cycle_loss, discriminator_loss_and_grads,
    generator_loss_and_grads, identity_loss, total_loss, GenTerms, LossComponents,
};
pub use presets::{desk_preset, paper_preset, GanArch};
pub use train::{train_gan, EpochLog, GanTrainConfig};

use std::path::Path;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ConnectivityVector, SubjectRecord, Volume};
use crate::error::{Error, Result};
use crate::nn::{Batch, Network, Shape};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// The four networks plus loss weights. `fold_tag` records which training
/// fold produced the model so downstream imputation can enforce the
/// no-leakage rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanModel {
    pub g1: Network,
    pub g2: Network,
    pub d1: Network,
    pub d2: Network,
    pub lambda1: f64,
    pub lambda2: f64,
    pub fnc_dim: usize,
    pub volume_shape: [usize; 3],
    pub fold_tag: Option<String>,
}

impl GanModel {
    /// Initialize all four networks from an architecture, seeded.
    pub fn init(arch: &GanArch, lambda1: f64, lambda2: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g1 = Network::new(&arch.g1, Shape::Vector(arch.fnc_dim), &mut rng)?;
        let g2 = Network::new(
            &arch.g2,
            Shape::Grid {
                channels: 1,
                dims: arch.volume_shape,
            },
            &mut rng,
        )?;
        let d1 = Network::new(
            &arch.d1,
            Shape::Grid {
                channels: 1,
                dims: arch.volume_shape,
            },
            &mut rng,
        )?;
        let d2 = Network::new(&arch.d2, Shape::Vector(arch.fnc_dim), &mut rng)?;
        let expect_vol = Shape::Grid {
            channels: 1,
            dims: arch.volume_shape,
        };
        if g1.output_shape != expect_vol {
            return Err(Error::Config(format!(
                "G1 output {:?} does not match volume shape {:?}",
                g1.output_shape, arch.volume_shape
            )));
        }
        if g2.output_shape != Shape::Vector(arch.fnc_dim) {
            return Err(Error::Config(format!(
                "G2 output {:?} does not match FNC length {}",
                g2.output_shape, arch.fnc_dim
            )));
        }
        if d1.output_shape != Shape::Vector(1) || d2.output_shape != Shape::Vector(1) {
            return Err(Error::Config("discriminators must emit one scalar".into()));
        }
        Ok(GanModel {
            g1,
            g2,
            d1,
            d2,
            lambda1,
            lambda2,
            fnc_dim: arch.fnc_dim,
            volume_shape: arch.volume_shape,
            fold_tag: None,
        })
    }

    pub fn fnc_batch(&self, xs: &[&ConnectivityVector]) -> Result<Batch> {
        if xs.is_empty() {
            return Err(Error::EmptyBatch("fnc batch"));
        }
        let mut data = Vec::with_capacity(xs.len() * self.fnc_dim);
        for x in xs {
            if x.len() != self.fnc_dim {
                return Err(Error::InvalidConnectivity(format!(
                    "batch vector length {} != model F {}",
                    x.len(),
                    self.fnc_dim
                )));
            }
            data.extend_from_slice(x.values());
        }
        Ok(Batch::new(data, Shape::Vector(self.fnc_dim), xs.len()))
    }

    pub fn volume_batch(&self, ys: &[&Volume]) -> Result<Batch> {
        if ys.is_empty() {
            return Err(Error::EmptyBatch("volume batch"));
        }
        let len = self.volume_shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(ys.len() * len);
        for y in ys {
            if y.shape() != self.volume_shape {
                return Err(Error::InvalidVolume(format!(
                    "batch volume shape {:?} != model {:?}",
                    y.shape(),
                    self.volume_shape
                )));
            }
            data.extend(y.voxels().iter());
        }
        Ok(Batch::new(
            data,
            Shape::Grid {
                channels: 1,
                dims: self.volume_shape,
            },
            ys.len(),
        ))
    }

    fn batch_to_volumes(&self, batch: &Batch) -> Vec<Volume> {
        let [d0, d1, d2] = self.volume_shape;
        (0..batch.n)
            .map(|i| {
                let vox =
                    Array3::from_shape_vec((d0, d1, d2), batch.sample(i).to_vec()).unwrap();
                Volume::new(vox).expect("tanh output is in range")
            })
            .collect()
    }

    fn batch_to_fncs(&self, batch: &Batch) -> Vec<ConnectivityVector> {
        (0..batch.n)
            .map(|i| {
                ConnectivityVector::from_flat(batch.sample(i).to_vec())
                    .expect("tanh output is in range")
            })
            .collect()
    }

    /// G1: FNC batch -> volume batch (eval mode).
    pub fn g1_forward(&self, xs: &[&ConnectivityVector]) -> Result<Vec<Volume>> {
        let batch = self.fnc_batch(xs)?;
        let out = self.g1.forward_eval(&batch);
        Ok(self.batch_to_volumes(&out))
    }

    /// G2: volume batch -> FNC batch (eval mode).
    pub fn g2_forward(&self, ys: &[&Volume]) -> Result<Vec<ConnectivityVector>> {
        let batch = self.volume_batch(ys)?;
        let out = self.g2.forward_eval(&batch);
        Ok(self.batch_to_fncs(&out))
    }

    /// D1: volume batch -> realness scores.
    pub fn d1_forward(&self, ys: &[&Volume]) -> Result<Vec<f64>> {
        let batch = self.volume_batch(ys)?;
        Ok(self.d1.forward_eval(&batch).data)
    }

    /// D2: FNC batch -> realness scores.
    pub fn d2_forward(&self, xs: &[&ConnectivityVector]) -> Result<Vec<f64>> {
        let batch = self.fnc_batch(xs)?;
        Ok(self.d2.forward_eval(&batch).data)
    }
}

/// Fill every missing modality with its generated counterpart; present
/// modalities are untouched and the result is complete.
pub fn impute_missing(model: &GanModel, cohort: &Cohort) -> Result<Cohort> {
    let mut records = Vec::with_capacity(cohort.records().len());
    for rec in cohort.records() {
        let mut rec: SubjectRecord = rec.clone();
        match (&rec.fnc, &rec.t1) {
            (None, Some(t1)) => {
                rec.fnc = Some(model.g2_forward(&[t1])?.remove(0));
            }
            (Some(fnc), None) => {
                rec.t1 = Some(model.g1_forward(&[fnc])?.remove(0));
            }
            _ => {}
        }
        records.push(rec);
    }
    Cohort::new(records, cohort.fnc_dim(), cohort.volume_shape())
}

/// Checkpoint container: versioned, with the full model (specs, parameters,
/// lambda weights) and the training config and seed that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: GanModel,
    pub config: GanTrainConfig,
}

pub fn save_checkpoint(model: &GanModel, config: &GanTrainConfig, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: model.clone(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint {}: {e}", path.display())))?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}
