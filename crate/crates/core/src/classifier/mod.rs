//! Late-fusion two-class classifier: a fully connected branch for
//! connectivity vectors and a 3-D convolutional branch for volumes, each
//! reduced to 8 features, concatenated into a 16-wide fused representation
//! and scored by a small fully connected head.

mod train;

pub use train::{train_classifier, ClassifierEpochLog, ClassifierTrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ConnectivityVector, Diagnosis, Volume};
use crate::cyclegan::presets::conv_pool_tower;
use crate::error::{Error, Result};
use crate::nn::{Batch, GradBuffer, LayerDesc, Mode, Network, Shape};

/// Width of each branch's output; fused width is twice this.
pub const BRANCH_WIDTH: usize = 8;
/// Width of the concatenated representation fed to the head.
pub const FUSED_WIDTH: usize = 2 * BRANCH_WIDTH;

/// Layer specs for the three sub-networks plus the input dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub fnc_dim: usize,
    pub volume_shape: [usize; 3],
    pub fnc_branch: Vec<LayerDesc>,
    pub t1_branch: Vec<LayerDesc>,
    pub head: Vec<LayerDesc>,
}

fn linear(in_features: usize, out_features: usize) -> LayerDesc {
    LayerDesc::Linear {
        in_features,
        out_features,
    }
}

fn branch_arch(
    fnc_dim: usize,
    volume_shape: [usize; 3],
    fnc_hidden: usize,
    channels: [usize; 5],
    t1_hidden: usize,
) -> ClassifierArch {
    let fnc_branch = vec![
        linear(fnc_dim, fnc_hidden),
        LayerDesc::Relu,
        linear(fnc_hidden, BRANCH_WIDTH),
        LayerDesc::Relu,
    ];
    let (mut t1_branch, pooled, out_ch) = conv_pool_tower(channels, volume_shape);
    t1_branch.push(LayerDesc::Flatten);
    t1_branch.push(linear(out_ch * pooled[0] * pooled[1] * pooled[2], t1_hidden));
    t1_branch.push(LayerDesc::Relu);
    t1_branch.push(linear(t1_hidden, BRANCH_WIDTH));
    t1_branch.push(LayerDesc::Relu);
    let head = vec![
        linear(FUSED_WIDTH, 8),
        LayerDesc::Relu,
        linear(8, 2),
    ];
    ClassifierArch {
        fnc_dim,
        volume_shape,
        fnc_branch,
        t1_branch,
        head,
    }
}

/// Full-scale architecture: 1378-dim vectors through 1378 -> 64 -> 8, volumes
/// through five conv stages with channels 64, 128, 192, 192, 128 and a
/// 64 -> 8 fully connected tail, fused width 16.
pub fn paper_classifier(fnc_dim: usize, volume_shape: [usize; 3]) -> ClassifierArch {
    branch_arch(fnc_dim, volume_shape, 64, [64, 128, 192, 192, 128], 64)
}

/// Small architecture for tests and desk experiments; same topology, narrow
/// channels so the whole model stays well under 1e5 parameters at 16^3.
pub fn desk_classifier(fnc_dim: usize, volume_shape: [usize; 3]) -> ClassifierArch {
    branch_arch(fnc_dim, volume_shape, 16, [4, 6, 8, 8, 6], 16)
}

/// The instantiated model: two branches plus the fusion head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionClassifier {
    pub fnc_branch: Network,
    pub t1_branch: Network,
    pub head: Network,
    pub fnc_dim: usize,
    pub volume_shape: [usize; 3],
    /// Learning rate chosen by the grid search, if this model was trained.
    pub selected_lr: Option<f64>,
}

impl FusionClassifier {
    pub fn init(arch: &ClassifierArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fnc_branch = Network::new(&arch.fnc_branch, Shape::Vector(arch.fnc_dim), &mut rng)?;
        let t1_branch = Network::new(
            &arch.t1_branch,
            Shape::Grid {
                channels: 1,
                dims: arch.volume_shape,
            },
            &mut rng,
        )?;
        let head = Network::new(&arch.head, Shape::Vector(FUSED_WIDTH), &mut rng)?;
        for (net, want, name) in [
            (&fnc_branch, BRANCH_WIDTH, "vector branch"),
            (&t1_branch, BRANCH_WIDTH, "volume branch"),
            (&head, 2, "head"),
        ] {
            if net.output_shape != Shape::Vector(want) {
                return Err(Error::InvalidSpec(format!(
                    "classifier {name} must output {want} features, got {:?}",
                    net.output_shape
                )));
            }
        }
        Ok(FusionClassifier {
            fnc_branch,
            t1_branch,
            head,
            fnc_dim: arch.fnc_dim,
            volume_shape: arch.volume_shape,
            selected_lr: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.fnc_branch.param_count() + self.t1_branch.param_count() + self.head.param_count()
    }

    /// Raw class scores (logits), eval mode, shape [n, 2].
    pub fn forward_eval(&self, fnc: &Batch, t1: &Batch) -> Batch {
        let f = self.fnc_branch.forward_eval(fnc);
        let t = self.t1_branch.forward_eval(t1);
        let fused = concat_features(&f, &t);
        self.head.forward_eval(&fused)
    }
}

/// Concatenate two [n, a] / [n, b] vector batches into [n, a+b].
fn concat_features(a: &Batch, b: &Batch) -> Batch {
    let (wa, wb) = (a.shape.numel(), b.shape.numel());
    assert_eq!(a.n, b.n, "fused branches must share the batch size");
    let mut data = Vec::with_capacity(a.n * (wa + wb));
    for i in 0..a.n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Batch::new(data, Shape::Vector(wa + wb), a.n)
}

fn split_features(fused: &Batch, wa: usize, wb: usize) -> (Batch, Batch) {
    let mut da = Vec::with_capacity(fused.n * wa);
    let mut db = Vec::with_capacity(fused.n * wb);
    for i in 0..fused.n {
        let s = fused.sample(i);
        da.extend_from_slice(&s[..wa]);
        db.extend_from_slice(&s[wa..]);
    }
    (
        Batch::new(da, Shape::Vector(wa), fused.n),
        Batch::new(db, Shape::Vector(wb), fused.n),
    )
}

fn softmax2(z0: f64, z1: f64) -> [f64; 2] {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Mean cross-entropy over the batch plus analytic gradients for all three
/// sub-networks. Labels index the score pair (0 = control, 1 = case).
pub fn classifier_loss_and_grads(
    model: &mut FusionClassifier,
    fnc: &Batch,
    t1: &Batch,
    labels: &[usize],
) -> Result<(f64, GradBuffer, GradBuffer, GradBuffer)> {
    if fnc.n == 0 {
        return Err(Error::EmptyBatch("classifier loss"));
    }
    if labels.len() != fnc.n || t1.n != fnc.n {
        return Err(Error::InvalidSpec(
            "classifier batch/label sizes disagree".into(),
        ));
    }
    let (f_out, f_cache) = {
        let (out, cache) = model.fnc_branch.forward(fnc, Mode::Train);
        (out, cache)
    };
    let (t_out, t_cache) = model.t1_branch.forward(t1, Mode::Train);
    let fused = concat_features(&f_out, &t_out);
    let (scores, h_cache) = model.head.forward(&fused, Mode::Train);

    let n = scores.n as f64;
    let mut loss = 0.0;
    let mut dscores = Batch::zeros(scores.shape, scores.n);
    for i in 0..scores.n {
        let s = scores.sample(i);
        let p = softmax2(s[0], s[1]);
        let y = labels[i];
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        let d = dscores.sample_mut(i);
        d[0] = (p[0] - if y == 0 { 1.0 } else { 0.0 }) / n;
        d[1] = (p[1] - if y == 1 { 1.0 } else { 0.0 }) / n;
    }
    loss /= n;

    let (dfused, h_grads) = model.head.backward(&h_cache, &dscores);
    let (df, dt) = split_features(&dfused, BRANCH_WIDTH, BRANCH_WIDTH);
    let (_, f_grads) = model.fnc_branch.backward(&f_cache, &df);
    let (_, t_grads) = model.t1_branch.backward(&t_cache, &dt);
    Ok((loss, f_grads, t_grads, h_grads))
}

/// Batch builders shared with the trainer and predictor.
pub(crate) fn modality_batches(
    model: &FusionClassifier,
    fncs: &[&ConnectivityVector],
    vols: &[&Volume],
) -> Result<(Batch, Batch)> {
    if fncs.is_empty() {
        return Err(Error::EmptyBatch("classifier input"));
    }
    let mut fdata = Vec::with_capacity(fncs.len() * model.fnc_dim);
    for v in fncs {
        if v.values().len() != model.fnc_dim {
            return Err(Error::InvalidConnectivity(format!(
                "classifier expects {} features, got {}",
                model.fnc_dim,
                v.values().len()
            )));
        }
        fdata.extend_from_slice(v.values());
    }
    let mut tdata = Vec::with_capacity(vols.len() * model.volume_shape.iter().product::<usize>());
    for v in vols {
        let dims = v.voxels().dim();
        if [dims.0, dims.1, dims.2] != model.volume_shape {
            return Err(Error::InvalidVolume(format!(
                "classifier expects {:?} volumes, got {:?}",
                model.volume_shape, dims
            )));
        }
        tdata.extend(v.voxels().iter().copied());
    }
    Ok((
        Batch::new(fdata, Shape::Vector(model.fnc_dim), fncs.len()),
        Batch::new(
            tdata,
            Shape::Grid {
                channels: 1,
                dims: model.volume_shape,
            },
            vols.len(),
        ),
    ))
}

/// One prediction per record, in the cohort's record order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub label: Diagnosis,
    pub probabilities: [f64; 2],
}

/// Score every record of a complete cohort. Probabilities are softmax of the
/// class scores and sum to 1 per record.
pub fn predict(model: &FusionClassifier, cohort: &Cohort) -> Result<Vec<Prediction>> {
    if !cohort.is_complete() {
        return Err(Error::InvalidCohort(
            "prediction requires both modalities on every record".into(),
        ));
    }
    let mut out = Vec::with_capacity(cohort.records().len());
    for r in cohort.records() {
        let (fb, tb) = modality_batches(
            model,
            &[r.fnc.as_ref().unwrap()],
            &[r.t1.as_ref().unwrap()],
        )?;
        let scores = model.forward_eval(&fb, &tb);
        let s = scores.sample(0);
        let p = softmax2(s[0], s[1]);
        out.push(Prediction {
            subject_id: r.subject_id.clone(),
            label: if p[1] >= p[0] { Diagnosis::Ad } else { Diagnosis::Cn },
            probabilities: p,
        });
    }
    Ok(out)
}

pub const CLASSIFIER_CHECKPOINT_VERSION: u32 = 1;

/// Same container layout as the GAN checkpoint, with the classifier payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub format_version: u32,
    pub model: FusionClassifier,
    pub config: ClassifierTrainConfig,
}

pub fn save_classifier(
    model: &FusionClassifier,
    config: &ClassifierTrainConfig,
    path: &std::path::Path,
) -> Result<()> {
    let ckpt = ClassifierCheckpoint {
        format_version: CLASSIFIER_CHECKPOINT_VERSION,
        model: model.clone(),
        config: config.clone(),
    };
    std::fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

pub fn load_classifier(path: &std::path::Path) -> Result<ClassifierCheckpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ckpt: ClassifierCheckpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint {}: {e}", path.display())))?;
    if ckpt.format_version != CLASSIFIER_CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported classifier checkpoint version {}",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}

pub fn label_index(d: Diagnosis) -> usize {
    match d {
        Diagnosis::Cn => 0,
        Diagnosis::Ad => 1,
    }
}
