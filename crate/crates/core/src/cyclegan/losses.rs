use serde::{Deserialize, Serialize};

use super::GanModel;
use crate::cohort::{ConnectivityVector, Volume};
use crate::error::{Error, Result};
use crate::nn::{Batch, GradBuffer, Mode, Network};

/// Least-squares discriminator loss: E[(D(real)-1)^2] + E[(D(fake))^2].
pub fn adversarial_loss_d(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::EmptyBatch("adversarial_loss_d"));
    }
    let r = real_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>()
        / real_scores.len() as f64;
    let f = fake_scores.iter().map(|s| s * s).sum::<f64>() / fake_scores.len() as f64;
    Ok(r + f)
}

/// Least-squares generator loss: E[(D(G(.)) - 1)^2].
pub fn adversarial_loss_g(fake_scores: &[f64]) -> Result<f64> {
    if fake_scores.is_empty() {
        return Err(Error::EmptyBatch("adversarial_loss_g"));
    }
    Ok(fake_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>()
        / fake_scores.len() as f64)
}

/// L1 subgradient convention: sign(0) = 0.
fn l1_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference over batch and elements, plus the gradient of
/// `scale * loss` w.r.t. `pred`.
fn l1_mean_and_grad(pred: &Batch, target: &Batch, scale: f64) -> (f64, Batch) {
    assert_eq!(pred.data.len(), target.data.len());
    let n = pred.data.len() as f64;
    let mut grad = Batch::zeros(pred.shape, pred.n);
    let mut total = 0.0;
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        total += d.abs();
        grad.data[i] = scale * l1_sign(d) / n;
    }
    (total / n, grad)
}

/// Cycle consistency: E|G2(G1(x)) - x| + E|G1(G2(y)) - y|, each term a mean
/// over batch and elements. An empty side contributes zero. Eval-mode
/// forwards (diagnostic value; the trainer computes its own train-mode
/// value).
pub fn cycle_loss(model: &GanModel, xs: &[&ConnectivityVector], ys: &[&Volume]) -> Result<f64> {
    let mut total = 0.0;
    if !xs.is_empty() {
        let x = model.fnc_batch(xs)?;
        let fy = model.g1.forward_eval(&x);
        let xc = model.g2.forward_eval(&fy);
        total += l1_mean_and_grad(&xc, &x, 0.0).0;
    }
    if !ys.is_empty() {
        let y = model.volume_batch(ys)?;
        let fx = model.g2.forward_eval(&y);
        let yc = model.g1.forward_eval(&fx);
        total += l1_mean_and_grad(&yc, &y, 0.0).0;
    }
    Ok(total)
}

/// Paired identity loss: mean over pairs of |G1(x)-y| + |G2(y)-x| (elementwise
/// means); empty paired set gives 0.
pub fn identity_loss(model: &GanModel, paired: &[(&ConnectivityVector, &Volume)]) -> Result<f64> {
    if paired.is_empty() {
        return Ok(0.0);
    }
    let xs: Vec<&ConnectivityVector> = paired.iter().map(|(x, _)| *x).collect();
    let ys: Vec<&Volume> = paired.iter().map(|(_, y)| *y).collect();
    let xb = model.fnc_batch(&xs)?;
    let yb = model.volume_batch(&ys)?;
    let fy = model.g1.forward_eval(&xb);
    let fx = model.g2.forward_eval(&yb);
    Ok(l1_mean_and_grad(&fy, &yb, 0.0).0 + l1_mean_and_grad(&fx, &xb, 0.0).0)
}

/// The components of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_d1: f64,
    pub adv_d2: f64,
    pub cycle: f64,
    pub identity: f64,
}

impl LossComponents {
    /// adv(G1,D1) + adv(G2,D2) + lambda1*cycle + lambda2*identity.
    pub fn total(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.adv_d1 + self.adv_d2 + lambda1 * self.cycle + lambda2 * self.identity
    }
}

/// Evaluate the full objective on explicit batches, returning every
/// component alongside the weighted total.
pub fn total_loss(
    model: &GanModel,
    xs: &[&ConnectivityVector],
    ys: &[&Volume],
    paired: &[(&ConnectivityVector, &Volume)],
) -> Result<(f64, LossComponents)> {
    let fake_y = model.g1_forward(xs)?;
    let fake_x = model.g2_forward(ys)?;
    let real_y_scores = model.d1_forward(ys)?;
    let fake_y_scores = model.d1_forward(&fake_y.iter().collect::<Vec<_>>())?;
    let real_x_scores = model.d2_forward(xs)?;
    let fake_x_scores = model.d2_forward(&fake_x.iter().collect::<Vec<_>>())?;
    let components = LossComponents {
        adv_d1: adversarial_loss_d(&real_y_scores, &fake_y_scores)?,
        adv_d2: adversarial_loss_d(&real_x_scores, &fake_x_scores)?,
        cycle: cycle_loss(model, xs, ys)?,
        identity: identity_loss(model, paired)?,
    };
    Ok((components.total(model.lambda1, model.lambda2), components))
}

/// Which generator objective terms to include (used by the trainer and by
/// per-term gradient checks).
#[derive(Debug, Clone, Copy)]
pub struct GenTerms {
    pub adversarial: bool,
    pub cycle: bool,
    pub identity: bool,
}

impl GenTerms {
    pub fn all() -> Self {
        GenTerms {
            adversarial: true,
            cycle: true,
            identity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenLossParts {
    pub adv_g1: f64,
    pub adv_g2: f64,
    pub cycle: f64,
    pub identity: f64,
    /// adv_g1 + adv_g2 + lambda1*cycle + lambda2*identity over enabled terms.
    pub total: f64,
}

/// Generator objective and its analytic gradients w.r.t. G1 and G2
/// parameters (train-mode forwards; discriminator parameters are read but
/// not updated). Returns (parts, grad_g1, grad_g2).
pub fn generator_loss_and_grads(
    model: &mut GanModel,
    x: Option<&Batch>,
    y: Option<&Batch>,
    paired: Option<(&Batch, &Batch)>,
    terms: GenTerms,
) -> Result<(GenLossParts, GradBuffer, GradBuffer)> {
    let lambda1 = model.lambda1;
    let lambda2 = model.lambda2;
    let mut parts = GenLossParts::default();
    let mut g1_grads = GradBuffer::zeros_like(&model.g1);
    let mut g2_grads = GradBuffer::zeros_like(&model.g2);

    if let Some(x) = x {
        let (fy, c_g1) = model.g1.forward(x, Mode::Train);
        let mut grad_fy = Batch::zeros(fy.shape, fy.n);
        if terms.adversarial {
            let (scores, c_d1) = model.d1.forward(&fy, Mode::Train);
            parts.adv_g1 = adversarial_loss_g(&scores.data)?;
            let mut gs = Batch::zeros(scores.shape, scores.n);
            for (g, s) in gs.data.iter_mut().zip(&scores.data) {
                *g = 2.0 * (s - 1.0) / scores.data.len() as f64;
            }
            let (gfy, _discard) = model.d1.backward(&c_d1, &gs);
            for (a, b) in grad_fy.data.iter_mut().zip(&gfy.data) {
                *a += b;
            }
        }
        if terms.cycle {
            let (xc, c_g2) = model.g2.forward(&fy, Mode::Train);
            let (val, gxc) = l1_mean_and_grad(&xc, x, lambda1);
            parts.cycle += val;
            let (gfy, g2g) = model.g2.backward(&c_g2, &gxc);
            g2_grads.add(&g2g);
            for (a, b) in grad_fy.data.iter_mut().zip(&gfy.data) {
                *a += b;
            }
        }
        let (_, g1g) = model.g1.backward(&c_g1, &grad_fy);
        g1_grads.add(&g1g);
    }

    if let Some(y) = y {
        let (fx, c_g2) = model.g2.forward(y, Mode::Train);
        let mut grad_fx = Batch::zeros(fx.shape, fx.n);
        if terms.adversarial {
            let (scores, c_d2) = model.d2.forward(&fx, Mode::Train);
            parts.adv_g2 = adversarial_loss_g(&scores.data)?;
            let mut gs = Batch::zeros(scores.shape, scores.n);
            for (g, s) in gs.data.iter_mut().zip(&scores.data) {
                *g = 2.0 * (s - 1.0) / scores.data.len() as f64;
            }
            let (gfx, _discard) = model.d2.backward(&c_d2, &gs);
            for (a, b) in grad_fx.data.iter_mut().zip(&gfx.data) {
                *a += b;
            }
        }
        if terms.cycle {
            let (yc, c_g1) = model.g1.forward(&fx, Mode::Train);
            let (val, gyc) = l1_mean_and_grad(&yc, y, lambda1);
            parts.cycle += val;
            let (gfx, g1g) = model.g1.backward(&c_g1, &gyc);
            g1_grads.add(&g1g);
            for (a, b) in grad_fx.data.iter_mut().zip(&gfx.data) {
                *a += b;
            }
        }
        let (_, g2g) = model.g2.backward(&c_g2, &grad_fx);
        g2_grads.add(&g2g);
    }

    if terms.identity {
        if let Some((xp, yp)) = paired {
            let (fyp, c_g1) = model.g1.forward(xp, Mode::Train);
            let (v1, gfyp) = l1_mean_and_grad(&fyp, yp, lambda2);
            let (_, g1g) = model.g1.backward(&c_g1, &gfyp);
            g1_grads.add(&g1g);

            let (fxp, c_g2) = model.g2.forward(yp, Mode::Train);
            let (v2, gfxp) = l1_mean_and_grad(&fxp, xp, lambda2);
            let (_, g2g) = model.g2.backward(&c_g2, &gfxp);
            g2_grads.add(&g2g);
            parts.identity = v1 + v2;
        }
    }

    parts.total = parts.adv_g1 + parts.adv_g2 + lambda1 * parts.cycle + lambda2 * parts.identity;
    Ok((parts, g1_grads, g2_grads))
}

/// Discriminator least-squares loss and its analytic parameter gradients.
pub fn discriminator_loss_and_grads(
    d: &mut Network,
    real: &Batch,
    fake: &Batch,
) -> Result<(f64, GradBuffer)> {
    let (rs, cr) = d.forward(real, Mode::Train);
    let (fs, cf) = d.forward(fake, Mode::Train);
    let loss = adversarial_loss_d(&rs.data, &fs.data)?;
    let mut gr = Batch::zeros(rs.shape, rs.n);
    for (g, s) in gr.data.iter_mut().zip(&rs.data) {
        *g = 2.0 * (s - 1.0) / rs.data.len() as f64;
    }
    let mut gf = Batch::zeros(fs.shape, fs.n);
    for (g, s) in gf.data.iter_mut().zip(&fs.data) {
        *g = 2.0 * s / fs.data.len() as f64;
    }
    let (_, mut grads) = d.backward(&cr, &gr);
    let (_, gfake) = d.backward(&cf, &gf);
    grads.add(&gfake);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_d_examples() {
        assert_eq!(adversarial_loss_d(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((adversarial_loss_d(&[0.5], &[0.5]).unwrap() - 0.5).abs() < 1e-12);
        assert!((adversarial_loss_d(&[1.0, 0.0], &[0.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(adversarial_loss_d(&[], &[0.0]).is_err());
    }

    #[test]
    fn adversarial_g_examples() {
        assert_eq!(adversarial_loss_g(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(adversarial_loss_g(&[0.0]).unwrap(), 1.0);
        assert!((adversarial_loss_g(&[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn combined_total_with_default_weights() {
        let c = LossComponents {
            adv_d1: 0.5,
            adv_d2: 0.5,
            cycle: 0.1,
            identity: 0.05,
        };
        assert!((c.total(10.0, 40.0) - 4.0).abs() < 1e-12);
        assert!((c.total(0.0, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_subgradient_zero_at_zero() {
        let pred = Batch::new(vec![0.3, -0.2], crate::nn::Shape::Vector(2), 1);
        let (v, g) = l1_mean_and_grad(&pred, &pred.clone(), 1.0);
        assert_eq!(v, 0.0);
        assert!(g.data.iter().all(|x| *x == 0.0));
    }
}
