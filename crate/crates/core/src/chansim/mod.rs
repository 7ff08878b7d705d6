//! Synthetic SIMO channel trajectories, observation noise and the unitary
//! DFT front end.
//!
//! Trajectories hold antenna-domain channels `h_1..h_I`. Observations are
//! always delivered in the DFT domain, where the estimators work with
//! diagonal covariances.

mod dataset;
mod dft;
mod gauss_markov;
mod noise;
mod paths;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dataset::{export_dataset, import_dataset, Dataset, Generator, HEADER_LEN};
pub use dft::{dft_preprocess, idft};
pub use gauss_markov::{generate_gauss_markov, GaussMarkovConfig};
pub use noise::{add_noise, add_noise_with, noise_variance};
pub use paths::{
    generate_trajectory, sample_path_set, sample_speed, steering_vector, synthesize, Path,
    PathModelConfig, PathSet, SPEED_OF_LIGHT,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    /// User speed in m/s; absent for channels without a path geometry.
    pub speed: Option<f64>,
    pub path_count: Option<usize>,
}

/// `I` consecutive antenna-domain channel vectors of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    channels: Vec<Vec<Complex64>>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(channels: Vec<Vec<Complex64>>, meta: TrajectoryMeta) -> Result<Self> {
        let r = channels.first().map_or(0, Vec::len);
        if r == 0 || channels.iter().any(|h| h.len() != r) {
            return Err(Error::Config("trajectory needs I >= 1 snapshots of equal length R >= 1".into()));
        }
        if channels.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("trajectory entry".into()));
        }
        Ok(Self { channels, meta })
    }

    pub fn snapshots(&self) -> usize {
        self.channels.len()
    }

    pub fn antennas(&self) -> usize {
        self.channels[0].len()
    }

    /// Channel at 0-based snapshot index `i`.
    pub fn channel(&self, i: usize) -> &[Complex64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<Complex64>] {
        &self.channels
    }

    pub fn last(&self) -> &[Complex64] {
        self.channels.last().expect("non-empty")
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for v in self.channels.iter_mut().flatten() {
            *v *= factor;
        }
    }

    /// DFT-domain copy of every snapshot.
    pub fn dft_channels(&self) -> Vec<Vec<Complex64>> {
        self.channels.iter().map(|h| dft_preprocess(h)).collect()
    }
}

/// Noisy DFT-domain observations `y_1..y_I` of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub observations: Vec<Vec<Complex64>>,
    pub noise_var: f64,
    pub snr_db: f64,
}

impl ObservationSequence {
    pub fn snapshots(&self) -> usize {
        self.observations.len()
    }

    pub fn antennas(&self) -> usize {
        self.observations[0].len()
    }
}

pub fn squared_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum()
}

/// Scale a dataset so that `(1/N) sum ||h_I||^2 = R`.
///
/// Each trajectory is first brought to unit mean power per entry across
/// its own snapshots (removing its average path gain); a single global
/// factor then fixes the last-snapshot power. Returns the global factor.
pub fn normalize_dataset(trajectories: &mut [Trajectory]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    for t in trajectories.iter_mut() {
        let entries = (t.snapshots() * t.antennas()) as f64;
        let power = t.channels.iter().map(|h| squared_norm(h)).sum::<f64>() / entries;
        if !(power > 0.0) {
            return Err(Error::Degenerate(format!("trajectory with seed {} has zero power", t.meta.seed)));
        }
        t.scale(1.0 / power.sqrt());
    }
    let r = trajectories[0].antennas() as f64;
    let last_power =
        trajectories.iter().map(|t| squared_norm(t.last())).sum::<f64>() / trajectories.len() as f64;
    if !(last_power > 0.0) {
        return Err(Error::Degenerate("last snapshot carries no power".into()));
    }
    let factor = (r / last_power).sqrt();
    for t in trajectories.iter_mut() {
        t.scale(factor);
    }
    Ok(factor)
}

/// Draw one standard circularly-symmetric complex Gaussian scaled to variance `var`.
pub(crate) fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    use rand_distr::{Distribution, StandardNormal};
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}
