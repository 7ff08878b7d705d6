use serde::{Deserialize, Serialize};

use super::{complex_gaussian, idft, Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};

/// Per-DFT-bin stationary AR(1) process.
///
/// Bin `r` follows `x_i = a x_{i-1} + w_i` with `w_i ~ CN(0, (1 - a^2) c_r)`
/// and `x_1 ~ CN(0, c_r)`, so every snapshot has variance `c_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussMarkovConfig {
    pub coefficient: f64,
    pub variances: Vec<f64>,
}

impl GaussMarkovConfig {
    /// Geometrically decaying bin variances with `variances[0] / variances[R-1] = spread`,
    /// scaled so that they sum to `R`.
    pub fn decaying(antennas: usize, coefficient: f64, spread: f64) -> Self {
        let ratio = if antennas > 1 {
            spread.powf(-1.0 / (antennas - 1) as f64)
        } else {
            1.0
        };
        let raw: Vec<f64> = (0..antennas).map(|r| ratio.powi(r as i32)).collect();
        let total: f64 = raw.iter().sum();
        let variances = raw.iter().map(|v| v * antennas as f64 / total).collect();
        Self {
            coefficient,
            variances,
        }
    }

    pub fn antennas(&self) -> usize {
        self.variances.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.coefficient) {
            return Err(Error::Config(format!(
                "AR coefficient {} outside [0, 1)",
                self.coefficient
            )));
        }
        if self.variances.is_empty() || self.variances.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Config("bin variances must be non-negative and non-empty".into()));
        }
        Ok(())
    }
}

pub fn generate_gauss_markov(seed: u64, cfg: &GaussMarkovConfig, snapshots: usize) -> Result<Trajectory> {
    cfg.validate()?;
    if snapshots == 0 {
        return Err(Error::Config("need at least one snapshot".into()));
    }
    let mut rng = stream_rng(seed, Stream::Trajectory, 0);
    let a = cfg.coefficient;
    let mut state: Vec<_> = cfg
        .variances
        .iter()
        .map(|&c| complex_gaussian(&mut rng, c))
        .collect();
    let mut channels = Vec::with_capacity(snapshots);
    channels.push(idft(&state));
    for _ in 1..snapshots {
        for (x, &c) in state.iter_mut().zip(&cfg.variances) {
            *x = *x * a + complex_gaussian(&mut rng, (1.0 - a * a) * c);
        }
        channels.push(idft(&state));
    }
    Trajectory::new(
        channels,
        TrajectoryMeta {
            seed,
            speed: None,
            path_count: None,
        },
    )
}
