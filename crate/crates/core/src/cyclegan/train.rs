use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    discriminator_loss_and_grads, generator_loss_and_grads, GanArch, GanModel, GenTerms,
    ReplayBuffer,
};
use crate::cohort::{Cohort, ConnectivityVector, Volume};
use crate::error::{Error, Result};
use crate::nn::{Adam, Batch};
use crate::seeds::derive_seed;

/// Training hyperparameters. Defaults follow the published protocol:
/// 300 epochs, batch 32, Adam at 0.05 decayed by 0.9 per epoch,
/// lambda1 = 10, lambda2 = 40, 50-sample replay buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 300,
            batch_size: 32,
            lr_initial: 0.05,
            lr_decay: 0.9,
            lambda1: 10.0,
            lambda2: 40.0,
            seed: 0,
            buffer_capacity: 50,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
        }
    }
}

/// One structured record per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub adv_d1: f64,
    pub adv_d2: f64,
    pub adv_g: f64,
    pub cycle: f64,
    pub identity: f64,
    pub lr: f64,
}

fn check_finite(epoch: usize, component: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            component: component.to_string(),
        })
    }
}

/// Cycling batch of indices: wraps around the shuffled pool so every batch
/// has exactly `size` entries.
fn take_cycled(pool: &[usize], start: usize, size: usize) -> Vec<usize> {
    (0..size).map(|i| pool[(start + i) % pool.len()]).collect()
}

/// Alternating least-squares GAN training: each batch first updates both
/// generators on adversarial + cycle + identity terms, then updates each
/// discriminator on real samples and replay-buffer fakes. Deterministic
/// given the seed.
pub fn train_gan(
    cohort: &Cohort,
    arch: &GanArch,
    config: &GanTrainConfig,
) -> Result<(GanModel, Vec<EpochLog>)> {
    let xs: Vec<&ConnectivityVector> = cohort.records().iter().filter_map(|r| r.fnc.as_ref()).collect();
    let ys: Vec<&Volume> = cohort.records().iter().filter_map(|r| r.t1.as_ref()).collect();
    let paired: Vec<(&ConnectivityVector, &Volume)> = cohort
        .records()
        .iter()
        .filter_map(|r| match (&r.fnc, &r.t1) {
            (Some(x), Some(y)) => Some((x, y)),
            _ => None,
        })
        .collect();
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidCohort(
            "GAN training needs at least one sample of each modality".into(),
        ));
    }

    let mut model = GanModel::init(
        arch,
        config.lambda1,
        config.lambda2,
        derive_seed(config.seed, "gan/init"),
    )?;
    let mut log = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok((model, log));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "gan/batches"));
    let mut buf_vol = ReplayBuffer::new(config.buffer_capacity, derive_seed(config.seed, "gan/buffer-d1"));
    let mut buf_fnc = ReplayBuffer::new(config.buffer_capacity, derive_seed(config.seed, "gan/buffer-d2"));

    let g_param_count = model.g1.param_count() + model.g2.param_count();
    let mut g_opt = Adam::new(g_param_count, config.lr_initial, config.adam_beta1, config.adam_beta2);
    let mut d1_opt = Adam::new(model.d1.param_count(), config.lr_initial, config.adam_beta1, config.adam_beta2);
    let mut d2_opt = Adam::new(model.d2.param_count(), config.lr_initial, config.adam_beta1, config.adam_beta2);

    let bs = config.batch_size.max(1);
    let n_batches = xs.len().max(ys.len()).div_ceil(bs);

    let mut x_order: Vec<usize> = (0..xs.len()).collect();
    let mut y_order: Vec<usize> = (0..ys.len()).collect();
    let mut p_order: Vec<usize> = (0..paired.len()).collect();

    for epoch in 0..config.epochs {
        x_order.shuffle(&mut rng);
        y_order.shuffle(&mut rng);
        p_order.shuffle(&mut rng);

        let mut sums = [0.0f64; 5]; // adv_d1, adv_d2, adv_g, cycle, identity
        for b in 0..n_batches {
            let x_idx = take_cycled(&x_order, b * bs, bs.min(xs.len()));
            let y_idx = take_cycled(&y_order, b * bs, bs.min(ys.len()));
            let xb_refs: Vec<&ConnectivityVector> = x_idx.iter().map(|&i| xs[i]).collect();
            let yb_refs: Vec<&Volume> = y_idx.iter().map(|&i| ys[i]).collect();
            let xb = model.fnc_batch(&xb_refs)?;
            let yb = model.volume_batch(&yb_refs)?;

            let paired_batch = if paired.is_empty() {
                None
            } else {
                let p_idx = take_cycled(&p_order, b * bs, bs.min(paired.len()));
                let pxs: Vec<&ConnectivityVector> = p_idx.iter().map(|&i| paired[i].0).collect();
                let pys: Vec<&Volume> = p_idx.iter().map(|&i| paired[i].1).collect();
                Some((model.fnc_batch(&pxs)?, model.volume_batch(&pys)?))
            };

            // Generator update.
            let (parts, g1g, g2g) = generator_loss_and_grads(
                &mut model,
                Some(&xb),
                Some(&yb),
                paired_batch.as_ref().map(|(a, b)| (a, b)),
                GenTerms::all(),
            )?;
            check_finite(epoch, "adv_g", parts.adv_g1 + parts.adv_g2)?;
            check_finite(epoch, "cycle", parts.cycle)?;
            check_finite(epoch, "identity", parts.identity)?;
            let mut g_params = model.g1.params_flat();
            g_params.extend(model.g2.params_flat());
            let mut g_grads = g1g.flatten();
            g_grads.extend(g2g.flatten());
            g_opt.step(&mut g_params, &g_grads);
            let split = model.g1.param_count();
            model.g1.set_params_flat(&g_params[..split]);
            model.g2.set_params_flat(&g_params[split..]);

            // Fresh fakes from the updated generators feed the buffers.
            let fake_y = model.g1.forward_eval(&xb);
            let fake_x = model.g2.forward_eval(&yb);
            let mut fake_y_train = Vec::with_capacity(fake_y.data.len());
            for i in 0..fake_y.n {
                fake_y_train.extend(buf_vol.push_sample(fake_y.sample(i).to_vec()));
            }
            let mut fake_x_train = Vec::with_capacity(fake_x.data.len());
            for i in 0..fake_x.n {
                fake_x_train.extend(buf_fnc.push_sample(fake_x.sample(i).to_vec()));
            }
            let fake_y_batch = Batch::new(fake_y_train, fake_y.shape, fake_y.n);
            let fake_x_batch = Batch::new(fake_x_train, fake_x.shape, fake_x.n);

            // Discriminator updates.
            let (ld1, d1g) = discriminator_loss_and_grads(&mut model.d1, &yb, &fake_y_batch)?;
            check_finite(epoch, "adv_d1", ld1)?;
            let mut d1_params = model.d1.params_flat();
            d1_opt.step(&mut d1_params, &d1g.flatten());
            model.d1.set_params_flat(&d1_params);

            let (ld2, d2g) = discriminator_loss_and_grads(&mut model.d2, &xb, &fake_x_batch)?;
            check_finite(epoch, "adv_d2", ld2)?;
            let mut d2_params = model.d2.params_flat();
            d2_opt.step(&mut d2_params, &d2g.flatten());
            model.d2.set_params_flat(&d2_params);

            sums[0] += ld1;
            sums[1] += ld2;
            sums[2] += parts.adv_g1 + parts.adv_g2;
            sums[3] += parts.cycle;
            sums[4] += parts.identity;
        }

        let nb = n_batches as f64;
        log.push(EpochLog {
            epoch,
            adv_d1: sums[0] / nb,
            adv_d2: sums[1] / nb,
            adv_g: sums[2] / nb,
            cycle: sums[3] / nb,
            identity: sums[4] / nb,
            lr: g_opt.lr,
        });

        g_opt.lr *= config.lr_decay;
        d1_opt.lr *= config.lr_decay;
        d2_opt.lr *= config.lr_decay;
    }

    Ok((model, log))
}
