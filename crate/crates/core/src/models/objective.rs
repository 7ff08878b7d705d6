//! Evidence lower bounds and their closed-form pieces.
//!
//! Every objective returns the ELBO averaged over the batch, as a value to
//! maximize. [`loss_gradients`] flips the sign once so the optimizer only
//! ever descends.

use std::f64::consts::PI;

use diffcore::{Axis, Tape, Tensor, Var};
use num_complex::Complex64;

use super::nets::{self, Binder, GaussVars};
use super::{channel_tensor, observation_tensor, ComplexGaussian, DiagGaussian, Model, ModelKind};
use crate::error::{Error, Result};

/// A batch of trajectories: clean DFT-domain channels `x_i` and their
/// DFT-domain observations `y_i`, stored per snapshot.
#[derive(Debug, Clone)]
pub struct Batch {
    size: usize,
    clean: Vec<Tensor>,
    noisy: Vec<Tensor>,
}

impl Batch {
    pub fn new(clean: &[&[Vec<Complex64>]], noisy: &[&[Vec<Complex64>]]) -> Result<Self> {
        if clean.is_empty() || clean.len() != noisy.len() {
            return Err(Error::Contract("batch needs matching, non-empty clean and noisy sets".into()));
        }
        let snapshots = clean[0].len();
        if snapshots == 0 || clean.iter().chain(noisy).any(|s| s.len() != snapshots) {
            return Err(Error::Contract("trajectories in a batch differ in length".into()));
        }
        let mut c = Vec::with_capacity(snapshots);
        let mut n = Vec::with_capacity(snapshots);
        for i in 0..snapshots {
            let xs: Vec<&[Complex64]> = clean.iter().map(|s| s[i].as_slice()).collect();
            let ys: Vec<&[Complex64]> = noisy.iter().map(|s| s[i].as_slice()).collect();
            c.push(channel_tensor(&xs)?);
            n.push(observation_tensor(&ys)?);
        }
        Ok(Self {
            size: clean.len(),
            clean: c,
            noisy: n,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn snapshots(&self) -> usize {
        self.clean.len()
    }

    pub fn antennas(&self) -> usize {
        self.noisy[0].shape()[2]
    }
}

/// `mean + exp(log_std) * eps`.
pub fn reparameterize(g: &DiagGaussian, eps: &[f64]) -> Vec<f64> {
    assert_eq!(eps.len(), g.dim(), "eps length must equal the latent dimension");
    g.mean
        .iter()
        .zip(&g.log_std)
        .zip(eps)
        .map(|((m, s), e)| m + s.exp() * e)
        .collect()
}

/// Closed-form `KL(q || p)` between diagonal Gaussians.
pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> f64 {
    assert_eq!(q.dim(), p.dim(), "KL needs equal dimensions");
    (0..q.dim())
        .map(|d| {
            let (mq, lq, mp, lp) = (q.mean[d], q.log_std[d], p.mean[d], p.log_std[d]);
            lp - lq + ((2.0 * lq).exp() + (mq - mp).powi(2)) / (2.0 * (2.0 * lp).exp()) - 0.5
        })
        .sum()
}

/// `sum_r [-ln(pi s_r) - |x_r - m_r|^2 / s_r]`.
pub fn complex_gaussian_loglik(x: &[Complex64], g: &ComplexGaussian) -> f64 {
    assert_eq!(x.len(), g.mean.len(), "dimension mismatch");
    x.iter()
        .zip(&g.mean)
        .zip(&g.variance)
        .map(|((x, m), v)| -(PI * v).ln() - (x - m).norm_sqr() / v)
        .sum()
}

fn sample(tape: &mut Tape, q: GaussVars, eps: Var) -> Result<Var> {
    let std = tape.exp(q.log_scale)?;
    let noise = tape.mul(std, eps)?;
    Ok(tape.add(q.mean, noise)?)
}

/// Per-sample, per-dimension KL, shape `[B, d]`.
fn kl_graph(tape: &mut Tape, q: GaussVars, p: GaussVars) -> Result<Var> {
    let d = tape.sub(q.log_scale, p.log_scale)?;
    let d2 = tape.scale(d, 2.0)?;
    let ratio = tape.exp(d2)?;
    let diff = tape.sub(q.mean, p.mean)?;
    let sq = tape.square(diff)?;
    let lp2 = tape.scale(p.log_scale, -2.0)?;
    let inv = tape.exp(lp2)?;
    let shift = tape.mul(sq, inv)?;
    let sum = tape.add(ratio, shift)?;
    let half = tape.scale(sum, 0.5)?;
    let body = tape.sub(half, d)?;
    Ok(tape.add_scalar(body, -0.5)?)
}

/// Batch-mean KL per dimension, floored at `free_bits`, summed.
fn floored_kl(tape: &mut Tape, kl: Var, free_bits: f64) -> Result<Var> {
    let per_dim = tape.mean(kl, Axis::Dim(0))?;
    let floored = if free_bits > 0.0 {
        tape.clamp(per_dim, free_bits, f64::INFINITY)?
    } else {
        per_dim
    };
    Ok(tape.sum(floored, Axis::All)?)
}

/// Per-sample complex log-likelihood, shape `[B]`.
fn loglik_graph(tape: &mut Tape, x: Var, g: GaussVars) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (b, r) = (shape[0], shape[1] / 2);
    let resid = tape.sub(x, g.mean)?;
    let sq = tape.square(resid)?;
    let pairs = tape.reshape(sq, &[b, r, 2])?;
    let err = tape.sum(pairs, Axis::Dim(2))?;
    let neg = tape.neg(g.log_scale)?;
    let prec = tape.exp(neg)?;
    let weighted = tape.mul(err, prec)?;
    let terms = tape.add(g.log_scale, weighted)?;
    let total = tape.sum(terms, Axis::Dim(1))?;
    let flipped = tape.neg(total)?;
    Ok(tape.add_scalar(flipped, -(r as f64) * PI.ln())?)
}

fn check_inputs(model: &Model, batch: &Batch, eps: &[Tensor]) -> Result<()> {
    let arch = model.architecture();
    if batch.snapshots() != arch.snapshots || batch.antennas() != arch.antennas {
        return Err(Error::Contract(format!(
            "batch is {}x{}, model expects I = {}, R = {}",
            batch.snapshots(),
            batch.antennas(),
            arch.snapshots,
            arch.antennas
        )));
    }
    let rows = match arch.kind {
        ModelKind::Vae => batch.size * arch.snapshots,
        _ => batch.size,
    };
    let count = if arch.kind == ModelKind::Kmmvae { arch.snapshots } else { 1 };
    if eps.len() != count || eps.iter().any(|e| e.shape() != [rows, arch.latent]) {
        return Err(Error::Contract(format!("expected {count} eps tensors of shape [{rows}, {}]", arch.latent)));
    }
    Ok(())
}

/// Records the ELBO graph. Returns the tape, the scalar ELBO and the binder
/// holding the parameter variables.
fn build<'a>(
    model: &'a Model,
    batch: &Batch,
    eps: &[Tensor],
    free_bits: f64,
    trainable: bool,
) -> Result<(Tape, Var, Binder<'a>)> {
    check_inputs(model, batch, eps)?;
    let arch = model.architecture();
    let (b, d, r) = (batch.size, arch.latent, arch.antennas);
    let mut tape = Tape::new();
    let mut bind = Binder::new(&model.store, trainable);
    let noisy: Vec<Var> = batch.noisy.iter().map(|t| tape.constant(t.clone())).collect();
    let elbo = match arch.kind {
        ModelKind::Kmmvae => {
            let mut z_prev: Option<Var> = None;
            let mut zs: Vec<Var> = Vec::with_capacity(arch.snapshots);
            let mut ll_sum: Option<Var> = None;
            let mut kl_sum: Option<Var> = None;
            for i in 1..=arch.snapshots {
                let stage = model.stage(i)?;
                let w = stage.encoder.window;
                let x = super::concat_or_single(&mut tape, &noisy[i - w..i], 1)?;
                let latent_in = match z_prev {
                    Some(z) => z,
                    None => tape.constant(Tensor::ones(&[b, d])),
                };
                let q = nets::encoder_forward(&mut tape, &mut bind, &stage.encoder, x, Some(latent_in), d)?;
                let e = tape.constant(eps[i - 1].clone());
                let z = sample(&mut tape, q, e)?;
                let p = nets::prior_forward(&mut tape, &mut bind, &stage.prior, z_prev, b, d)?;
                zs.push(z);
                let lat = super::concat_or_single(&mut tape, &zs[i - stage.decoder.window..i], 1)?;
                let g = nets::decoder_forward(&mut tape, &mut bind, &stage.decoder, lat, r)?;
                let target = tape.constant(batch.clean[i - 1].clone());
                let ll = loglik_graph(&mut tape, target, g)?;
                let kl = kl_graph(&mut tape, q, p)?;
                let kl = floored_kl(&mut tape, kl, free_bits)?;
                ll_sum = Some(match ll_sum {
                    Some(s) => tape.add(s, ll)?,
                    None => ll,
                });
                kl_sum = Some(match kl_sum {
                    Some(s) => tape.add(s, kl)?,
                    None => kl,
                });
                z_prev = Some(z);
            }
            let ll = tape.mean(ll_sum.expect("I >= 1"), Axis::All)?;
            tape.sub(ll, kl_sum.expect("I >= 1"))?
        }
        ModelKind::Vae => {
            // Snapshots are pooled into one batch of independent pairs; the
            // trajectory ELBO is the sum over snapshots.
            let stage = model.stage(1)?;
            let x = super::concat_or_single(&mut tape, &noisy, 0)?;
            let clean: Vec<Var> = batch.clean.iter().map(|t| tape.constant(t.clone())).collect();
            let target = super::concat_or_single(&mut tape, &clean, 0)?;
            let per = standard_elbo(&mut tape, &mut bind, stage, x, target, &eps[0], free_bits, d, r)?;
            tape.scale(per, arch.snapshots as f64)?
        }
        ModelKind::Tsvae => {
            let stage = model.stage(1)?;
            let x = super::concat_or_single(&mut tape, &noisy, 1)?;
            let target = tape.constant(batch.clean[arch.target - 1].clone());
            standard_elbo(&mut tape, &mut bind, stage, x, target, &eps[0], free_bits, d, r)?
        }
    };
    Ok((tape, elbo, bind))
}

#[allow(clippy::too_many_arguments)]
fn standard_elbo(
    tape: &mut Tape,
    bind: &mut Binder,
    stage: &nets::Stage,
    x: Var,
    target: Var,
    eps: &Tensor,
    free_bits: f64,
    d: usize,
    r: usize,
) -> Result<Var> {
    let rows = tape.shape(x)[0];
    let q = nets::encoder_forward(tape, bind, &stage.encoder, x, None, d)?;
    let e = tape.constant(eps.clone());
    let z = sample(tape, q, e)?;
    let p = nets::prior_forward(tape, bind, &stage.prior, None, rows, d)?;
    let g = nets::decoder_forward(tape, bind, &stage.decoder, z, r)?;
    let ll = loglik_graph(tape, target, g)?;
    let ll = tape.mean(ll, Axis::All)?;
    let kl = kl_graph(tape, q, p)?;
    let kl = floored_kl(tape, kl, free_bits)?;
    Ok(tape.sub(ll, kl)?)
}

/// Single-sample ELBO of any model kind, averaged over the batch.
pub fn elbo(model: &Model, batch: &Batch, eps: &[Tensor], free_bits: f64) -> Result<f64> {
    let (tape, v, _) = build(model, batch, eps, free_bits, false)?;
    Ok(tape.value(v).item())
}

/// Sequential ELBO of a kMMVAE: per snapshot, reconstruction of `x_i` from
/// the sampled latent window minus the KL to the transition prior given the
/// sampled previous latent.
pub fn elbo_dvae(model: &Model, batch: &Batch, eps: &[Tensor], free_bits: f64) -> Result<f64> {
    if model.kind() != ModelKind::Kmmvae {
        return Err(Error::Contract("elbo_dvae needs a kMMVAE".into()));
    }
    elbo(model, batch, eps, free_bits)
}

/// ELBO of a VAE or TSVAE against a standard-normal prior.
pub fn elbo_standard(model: &Model, batch: &Batch, eps: &[Tensor], free_bits: f64) -> Result<f64> {
    if model.kind() == ModelKind::Kmmvae {
        return Err(Error::Contract("elbo_standard needs a VAE or TSVAE".into()));
    }
    elbo(model, batch, eps, free_bits)
}

/// ELBO value and the gradient of the loss `-ELBO` for every parameter,
/// in store order.
pub fn loss_gradients(model: &Model, batch: &Batch, eps: &[Tensor], free_bits: f64) -> Result<(f64, Vec<Tensor>)> {
    let (mut tape, v, bind) = build(model, batch, eps, free_bits, true)?;
    let value = tape.value(v).item();
    let loss = tape.neg(v)?;
    tape.backward(loss)?;
    Ok((value, bind.gradients(&tape)))
}
