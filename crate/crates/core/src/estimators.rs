//! Channel estimators.
//!
//! All VAE-family estimators and the Kalman oracle filter per DFT bin with
//! diagonal covariances and return the estimate in the antenna domain. The
//! sample-covariance estimator works in the antenna domain with the full
//! matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::chansim::{idft, GaussMarkovConfig, ObservationSequence};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Per-bin LMMSE `mu + var / (var + noise_var) * (y - mu)`. Bins with
/// `var + noise_var = 0` return `mu`.
pub fn lmmse_filter(mu: &[Complex64], var: &[f64], y: &[Complex64], noise_var: f64) -> Vec<Complex64> {
    assert!(mu.len() == var.len() && mu.len() == y.len(), "dimension mismatch");
    mu.iter()
        .zip(var)
        .zip(y)
        .map(|((m, v), y)| {
            let total = v + noise_var;
            if total > 0.0 {
                m + (y - m) * (v / total)
            } else {
                *m
            }
        })
        .collect()
}

fn snapshot_of(obs: &ObservationSequence, snapshot: usize) -> Result<&[Complex64]> {
    if snapshot == 0 || snapshot > obs.snapshots() {
        return Err(Error::Config(format!("snapshot {snapshot} outside 1..={}", obs.snapshots())));
    }
    Ok(&obs.observations[snapshot - 1])
}

/// Least squares: the observation itself, mapped back to the antenna domain.
pub fn ls_estimate(obs: &ObservationSequence, snapshot: usize) -> Result<Vec<Complex64>> {
    Ok(idft(snapshot_of(obs, snapshot)?))
}

/// Sample mean and covariance (divisor `N`) of antenna-domain channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovModel {
    pub mean: DVector<Complex64>,
    pub covariance: DMatrix<Complex64>,
}

pub fn fit_sample_cov(channels: &[&[Complex64]]) -> Result<SampleCovModel> {
    let n = channels.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("sample covariance needs N >= 2, got {n}")));
    }
    let r = channels[0].len();
    if channels.iter().any(|h| h.len() != r) {
        return Err(Error::Contract("channels differ in length".into()));
    }
    let data = DMatrix::from_fn(r, n, |row, col| channels[col][row]);
    let mean = data.column_mean();
    let centered = DMatrix::from_fn(r, n, |row, col| data[(row, col)] - mean[row]);
    let mut covariance = &centered * centered.adjoint() / Complex64::from(n as f64);
    // Exact Hermitian symmetry; the product leaves rounding asymmetry.
    for i in 0..r {
        covariance[(i, i)].im = 0.0;
        for j in 0..i {
            let v = (covariance[(i, j)] + covariance[(j, i)].conj()) * 0.5;
            covariance[(i, j)] = v;
            covariance[(j, i)] = v.conj();
        }
    }
    Ok(SampleCovModel { mean, covariance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScovEstimate {
    pub channel: Vec<Complex64>,
    /// Set when `C + noise_var I` was singular and the pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// `h_bar + C (C + noise_var I)^{-1} (y - h_bar)` with antenna-domain `y`.
pub fn scov_lmmse_estimate(model: &SampleCovModel, y: &[Complex64], noise_var: f64) -> Result<ScovEstimate> {
    let r = model.mean.len();
    if y.len() != r {
        return Err(Error::Contract(format!("observation length {} != {r}", y.len())));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Config(format!("noise variance {noise_var} must be non-negative")));
    }
    let resid = DVector::from_fn(r, |i, _| y[i] - model.mean[i]);
    let mut a = model.covariance.clone();
    for i in 0..r {
        a[(i, i)] += noise_var;
    }
    let svd = a.clone().svd(false, false);
    let largest = svd.singular_values.max();
    let singular = !(largest > 0.0) || svd.singular_values.min() <= PINV_RTOL * largest;
    let x = if singular {
        a.pseudo_inverse(PINV_RTOL * largest.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Degenerate(e.to_string()))?
            * &resid
    } else {
        a.lu()
            .solve(&resid)
            .ok_or_else(|| Error::Degenerate("LMMSE system is singular".into()))?
    };
    let h = &model.mean + &model.covariance * x;
    Ok(ScovEstimate {
        channel: h.iter().copied().collect(),
        pseudo_inverse: singular,
    })
}

/// Exact MMSE estimate of snapshot `snapshot` on the Gauss-Markov channel
/// by a scalar Kalman filter per DFT bin, over `y_1..=y_snapshot`.
pub fn kalman_oracle(
    cfg: &GaussMarkovConfig,
    observations: &[Vec<Complex64>],
    noise_var: f64,
    snapshot: usize,
) -> Result<Vec<Complex64>> {
    let (means, _) = kalman_filter(cfg, observations, noise_var, snapshot)?;
    Ok(idft(&means))
}

/// Filtered mean and error variance per bin after `snapshot` updates.
pub fn kalman_filter(
    cfg: &GaussMarkovConfig,
    observations: &[Vec<Complex64>],
    noise_var: f64,
    snapshot: usize,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    cfg.validate()?;
    if snapshot == 0 || snapshot > observations.len() {
        return Err(Error::Config(format!("snapshot {snapshot} outside 1..={}", observations.len())));
    }
    let r = cfg.antennas();
    if observations.iter().any(|y| y.len() != r) {
        return Err(Error::Contract("observation length does not match the configuration".into()));
    }
    let a = cfg.coefficient;
    let mut mean = vec![Complex64::new(0.0, 0.0); r];
    let mut var = cfg.variances.clone();
    for (t, y) in observations[..snapshot].iter().enumerate() {
        for b in 0..r {
            if t > 0 {
                mean[b] *= a;
                var[b] = a * a * var[b] + (1.0 - a * a) * cfg.variances[b];
            }
            let total = var[b] + noise_var;
            let gain = if total > 0.0 { var[b] / total } else { 0.0 };
            let innovation = y[b] - mean[b];
            mean[b] += innovation * gain;
            var[b] *= 1.0 - gain;
        }
    }
    Ok((mean, var))
}

/// Exact `ln p(y_1..y_I)` on the Gauss-Markov channel observed in white
/// noise of variance `noise_var`, by prediction-error decomposition. With
/// `noise_var = 0` this is the log-density of the clean trajectory.
pub fn kalman_log_likelihood(cfg: &GaussMarkovConfig, observations: &[Vec<Complex64>], noise_var: f64) -> Result<f64> {
    cfg.validate()?;
    let r = cfg.antennas();
    if observations.iter().any(|y| y.len() != r) {
        return Err(Error::Contract("observation length does not match the configuration".into()));
    }
    let a = cfg.coefficient;
    let mut mean = vec![Complex64::new(0.0, 0.0); r];
    let mut var = cfg.variances.clone();
    let mut ll = 0.0;
    for (t, y) in observations.iter().enumerate() {
        for b in 0..r {
            if t > 0 {
                mean[b] *= a;
                var[b] = a * a * var[b] + (1.0 - a * a) * cfg.variances[b];
            }
            let s = var[b] + noise_var;
            if !(s > 0.0) {
                return Err(Error::Degenerate(format!("bin {b} has zero predictive variance")));
            }
            let e = y[b] - mean[b];
            ll += -(std::f64::consts::PI * s).ln() - e.norm_sqr() / s;
            let gain = var[b] / s;
            mean[b] += e * gain;
            var[b] *= 1.0 - gain;
        }
    }
    Ok(ll)
}

/// Genie memoryless LMMSE on the Gauss-Markov channel: per-bin filter with
/// the true stationary variances, ignoring every other snapshot.
pub fn genie_memoryless(cfg: &GaussMarkovConfig, y: &[Complex64], noise_var: f64) -> Vec<Complex64> {
    let zero = vec![Complex64::new(0.0, 0.0); y.len()];
    idft(&lmmse_filter(&zero, &cfg.variances, y, noise_var))
}

/// LMMSE estimates at `snapshot` from a trained VAE, TSVAE or kMMVAE for a
/// batch of observation sequences.
pub fn model_estimates(model: &Model, observations: &[&ObservationSequence], snapshot: usize) -> Result<Vec<Vec<Complex64>>> {
    let seqs: Vec<&[Vec<Complex64>]> = observations.iter().map(|o| o.observations.as_slice()).collect();
    let moments = model.conditional_moments(&seqs, snapshot)?;
    observations
        .iter()
        .zip(moments)
        .map(|(o, g)| {
            let y = snapshot_of(o, snapshot)?;
            Ok(idft(&lmmse_filter(&g.mean, &g.variance, y, o.noise_var)))
        })
        .collect()
}

fn single(model: &Model, kind: ModelKind, obs: &ObservationSequence, snapshot: usize) -> Result<Vec<Complex64>> {
    if model.kind() != kind {
        return Err(Error::Config(format!("expected a {} model, got {}", kind.name(), model.kind().name())));
    }
    Ok(model_estimates(model, &[obs], snapshot)?.remove(0))
}

/// Memoryless VAE: encoder mean from `y_snapshot`, decoded, then filtered.
pub fn vae_estimate(model: &Model, obs: &ObservationSequence, snapshot: usize) -> Result<Vec<Complex64>> {
    single(model, ModelKind::Vae, obs, snapshot)
}

/// TSVAE: encoder mean from the whole observed trajectory.
pub fn tsvae_estimate(model: &Model, obs: &ObservationSequence, snapshot: usize) -> Result<Vec<Complex64>> {
    single(model, ModelKind::Tsvae, obs, snapshot)
}

/// kMMVAE: posterior mean path over `y_1..=y_snapshot`, decoder at the
/// last `k + 1` means, then filtered.
pub fn kmmvae_estimate(model: &Model, obs: &ObservationSequence, snapshot: usize) -> Result<Vec<Complex64>> {
    single(model, ModelKind::Kmmvae, obs, snapshot)
}
