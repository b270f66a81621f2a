//! Helpers shared between the gradient-check, metric-oracle, and acceptance
//! integration tests: finite-difference gradient verification routines and
//! brute-force metric re-implementations.

#![allow(dead_code)]

use ndarray::Array3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurocycle::classifier::{classifier_loss_and_grads, desk_classifier, FusionClassifier};
use neurocycle::cohort::{ConnectivityVector, Volume};
use neurocycle::cyclegan::{
    desk_preset, discriminator_loss_and_grads, generator_loss_and_grads, GanModel, GenTerms,
};
use neurocycle::nn::Batch;

pub const EPS: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-3;
// Central differences on an O(1) loss bottom out near 1e-10 absolute error
// (cancellation of ~1e-16 over 2e-6), so gradients that small are compared
// absolutely rather than relatively.
pub const ABS_TOL: f64 = 1e-9;
pub const N_PARAMS: usize = 24;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

pub fn grads_agree(analytic: f64, fd: f64) -> bool {
    rel_err(analytic, fd) <= REL_TOL || (analytic - fd).abs() <= ABS_TOL
}

pub fn random_fnc_batch(f: usize, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let data: Vec<f64> = (0..n * f).map(|_| rng.gen_range(-0.9..0.9)).collect();
    Batch::new(data, neurocycle::nn::Shape::Vector(f), n)
}

pub fn random_volume_batch(dims: [usize; 3], n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let numel: usize = dims.iter().product();
    let data: Vec<f64> = (0..n * numel).map(|_| rng.gen_range(-0.9..0.9)).collect();
    Batch::new(data, neurocycle::nn::Shape::Grid { channels: 1, dims }, n)
}

pub fn model_for_checks() -> GanModel {
    let arch = desk_preset(4, [8, 8, 8]).unwrap();
    let model = GanModel::init(&arch, 10.0, 40.0, 77).unwrap();
    let total = model.g1.param_count()
        + model.g2.param_count()
        + model.d1.param_count()
        + model.d2.param_count();
    assert!(total <= 100_000, "desk GAN has {total} parameters");
    model
}

fn gen_params(model: &GanModel) -> Vec<f64> {
    let mut p = model.g1.params_flat();
    p.extend(model.g2.params_flat());
    p
}

fn set_gen_params(model: &mut GanModel, flat: &[f64]) {
    let split = model.g1.param_count();
    model.g1.set_params_flat(&flat[..split]);
    model.g2.set_params_flat(&flat[split..]);
}

/// Check one generator term against central differences on 24 randomly
/// chosen generator parameters.
pub fn check_generator_term(terms: GenTerms, tag: &str) {
    let mut model = model_for_checks();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = random_fnc_batch(6, 3, &mut rng);
    let y = random_volume_batch([8, 8, 8], 3, &mut rng);
    let paired = (
        random_fnc_batch(6, 3, &mut rng),
        random_volume_batch([8, 8, 8], 3, &mut rng),
    );

    let (_, g1g, g2g) = generator_loss_and_grads(
        &mut model,
        Some(&x),
        Some(&y),
        Some((&paired.0, &paired.1)),
        terms,
    )
    .unwrap();
    let mut analytic = g1g.flatten();
    analytic.extend(g2g.flatten());
    let base = gen_params(&model);

    let loss_at = |flat: &[f64]| {
        let mut m = model.clone();
        set_gen_params(&mut m, flat);
        generator_loss_and_grads(
            &mut m,
            Some(&x),
            Some(&y),
            Some((&paired.0, &paired.1)),
            terms,
        )
        .unwrap()
        .0
        .total
    };

    let mut checked = 0;
    for idx in sample(&mut rng, base.len(), N_PARAMS) {
        let mut plus = base.clone();
        plus[idx] += EPS;
        let mut minus = base.clone();
        minus[idx] -= EPS;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * EPS);
        let an = analytic[idx];
        assert!(
            grads_agree(an, fd),
            "{tag}: param {idx} analytic {an:e} vs fd {fd:e} (rel {:.2e})",
            rel_err(an, fd)
        );
        checked += 1;
    }
    assert!(checked >= 20, "{tag}: only {checked} parameters checked");
}

/// Check both discriminator objectives against central differences.
pub fn check_discriminator_gradients() {
    let model = model_for_checks();
    let mut rng = ChaCha8Rng::seed_from_u64(102);

    // D1 judges volumes, D2 judges vectors.
    for (which, real, fake) in [
        (
            "d1",
            random_volume_batch([8, 8, 8], 3, &mut rng),
            random_volume_batch([8, 8, 8], 3, &mut rng),
        ),
        (
            "d2",
            random_fnc_batch(6, 3, &mut rng),
            random_fnc_batch(6, 3, &mut rng),
        ),
    ] {
        let mut d = if which == "d1" {
            model.d1.clone()
        } else {
            model.d2.clone()
        };
        let (_, grads) = discriminator_loss_and_grads(&mut d, &real, &fake).unwrap();
        let analytic = grads.flatten();
        let base = d.params_flat();
        let mut checked = 0;
        for idx in sample(&mut rng, base.len(), N_PARAMS) {
            let fd = {
                let at = |delta: f64| {
                    let mut dc = d.clone();
                    let mut p = base.clone();
                    p[idx] += delta;
                    dc.set_params_flat(&p);
                    discriminator_loss_and_grads(&mut dc, &real, &fake).unwrap().0
                };
                (at(EPS) - at(-EPS)) / (2.0 * EPS)
            };
            let an = analytic[idx];
            assert!(
                grads_agree(an, fd),
                "{which}: param {idx} analytic {an:e} vs fd {fd:e}"
            );
            checked += 1;
        }
        assert!(checked >= 20);
    }
}

/// Check the classifier's cross-entropy gradients against central
/// differences.
pub fn check_classifier_gradients() {
    let arch = desk_classifier(6, [4, 4, 4]);
    let mut model = FusionClassifier::init(&arch, 55).unwrap();
    assert!(model.param_count() <= 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(103);

    let fncs: Vec<ConnectivityVector> = (0..4)
        .map(|_| {
            ConnectivityVector::from_flat((0..6).map(|_| rng.gen_range(-0.9..0.9)).collect())
                .unwrap()
        })
        .collect();
    let vols: Vec<Volume> = (0..4)
        .map(|_| {
            Volume::new(Array3::from_shape_fn((4, 4, 4), |_| {
                rng.gen_range(-0.9..0.9)
            }))
            .unwrap()
        })
        .collect();
    let labels = vec![0usize, 1, 1, 0];

    let fb = Batch::new(
        fncs.iter().flat_map(|v| v.values().to_vec()).collect(),
        neurocycle::nn::Shape::Vector(6),
        4,
    );
    let tb = Batch::new(
        vols.iter()
            .flat_map(|v| v.voxels().iter().copied().collect::<Vec<_>>())
            .collect(),
        neurocycle::nn::Shape::Grid {
            channels: 1,
            dims: [4, 4, 4],
        },
        4,
    );

    let (_, fg, tg, hg) = classifier_loss_and_grads(&mut model, &fb, &tb, &labels).unwrap();
    let mut analytic = fg.flatten();
    analytic.extend(tg.flatten());
    analytic.extend(hg.flatten());

    let mut base = model.fnc_branch.params_flat();
    base.extend(model.t1_branch.params_flat());
    base.extend(model.head.params_flat());

    let loss_at = |flat: &[f64]| {
        let mut m = model.clone();
        let a = m.fnc_branch.param_count();
        let b = a + m.t1_branch.param_count();
        m.fnc_branch.set_params_flat(&flat[..a]);
        m.t1_branch.set_params_flat(&flat[a..b]);
        m.head.set_params_flat(&flat[b..]);
        classifier_loss_and_grads(&mut m, &fb, &tb, &labels).unwrap().0
    };

    let mut checked = 0;
    for idx in sample(&mut rng, base.len(), N_PARAMS) {
        let mut plus = base.clone();
        plus[idx] += EPS;
        let mut minus = base.clone();
        minus[idx] -= EPS;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * EPS);
        let an = analytic[idx];
        assert!(
            grads_agree(an, fd),
            "classifier: param {idx} analytic {an:e} vs fd {fd:e}"
        );
        checked += 1;
    }
    assert!(checked >= 20);
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles.
// ---------------------------------------------------------------------------

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_volume(dims: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Volume {
    Volume::new(Array3::from_shape_fn(dims, |_| rng.gen_range(-1.0..1.0))).unwrap()
}

pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da.sqrt() * db.sqrt())
}

pub fn welch_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / (nb - 1.0);
    (ma - mb) / (va / na + vb / nb).sqrt()
}

/// Sliding uniform window SSIM written as literally as possible: every valid
/// window position, population moments, standard stability constants.
pub fn ssim_oracle(a: &Volume, b: &Volume, data_range: f64, w: usize) -> f64 {
    let (d, h, wd) = a.voxels().dim();
    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let mut total = 0.0;
    let mut count = 0usize;
    for z in 0..=(d - w) {
        for y in 0..=(h - w) {
            for x in 0..=(wd - w) {
                let mut xs = Vec::with_capacity(w * w * w);
                let mut ys = Vec::with_capacity(w * w * w);
                for dz in 0..w {
                    for dy in 0..w {
                        for dx in 0..w {
                            xs.push(a.voxels()[[z + dz, y + dy, x + dx]]);
                            ys.push(b.voxels()[[z + dz, y + dy, x + dx]]);
                        }
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n;
                let vy = ys.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n;
                let cov = xs
                    .iter()
                    .zip(&ys)
                    .map(|(p, q)| (p - mx) * (q - my))
                    .sum::<f64>()
                    / n;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}
