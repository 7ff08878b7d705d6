//! Geometric sum-of-paths channel with Doppler phase rotation.
//!
//! Each trajectory draws a handful of paths with fixed arrival angles and
//! gains. Only the path phases evolve over time, each rotating at its own
//! Doppler frequency `(v / c) f_c cos(alpha)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const GEOMETRY_INDEX: u64 = 0;
const SPEED_INDEX: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathModelConfig {
    /// Receive antennas `R`.
    pub antennas: usize,
    /// Snapshots `I` per trajectory.
    pub snapshots: usize,
    /// Snapshot spacing `T` in seconds.
    pub interval: f64,
    /// Carrier frequency in Hz.
    pub carrier: f64,
    pub max_paths: usize,
    pub los_prob: f64,
    /// Rayleigh parameter `sigma^2` of the user speed in (m/s)^2.
    pub speed_variance: f64,
    /// Overrides the Rayleigh speed draw when set.
    pub fixed_speed: Option<f64>,
}

impl Default for PathModelConfig {
    fn default() -> Self {
        Self {
            antennas: 32,
            snapshots: 8,
            interval: 0.5e-3,
            carrier: 2.1e9,
            max_paths: 5,
            los_prob: 0.2,
            speed_variance: 4.0,
            fixed_speed: None,
        }
    }
}

impl PathModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.snapshots == 0 {
            return Err(Error::Config("R and I must be at least 1".into()));
        }
        if !(self.interval > 0.0) || !(self.carrier > 0.0) {
            return Err(Error::Config("T and f_c must be positive".into()));
        }
        if self.max_paths == 0 {
            return Err(Error::Config("need at least one path".into()));
        }
        if !(0.0..=1.0).contains(&self.los_prob) {
            return Err(Error::Config("los_prob must lie in [0, 1]".into()));
        }
        if !(self.speed_variance >= 0.0) || self.fixed_speed.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::Config("speeds must be non-negative".into()));
        }
        Ok(())
    }

    /// Largest Doppler shift reachable at speed `v`.
    pub fn max_doppler(&self, speed: f64) -> f64 {
        speed * self.carrier / SPEED_OF_LIGHT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Complex64,
    /// Arrival angle in radians, broadside at zero.
    pub angle: f64,
    /// Doppler frequency in Hz.
    pub doppler: f64,
    /// Initial phase in radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

/// Half-wavelength ULA response `[1, e^{-j pi sin t}, ..., e^{-j pi (R-1) sin t}]`.
pub fn steering_vector(angle: f64, antennas: usize) -> Vec<Complex64> {
    let step = -PI * angle.sin();
    (0..antennas)
        .map(|r| Complex64::from_polar(1.0, step * r as f64))
        .collect()
}

/// Rayleigh draw by inverse CDF, `sigma * sqrt(-2 ln U)`.
fn rayleigh<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> f64 {
    let u: f64 = rng.random();
    variance.sqrt() * (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Rayleigh user speed with `sigma^2 = 4`.
pub fn sample_speed(seed: u64) -> f64 {
    rayleigh(&mut stream_rng(seed, Stream::Trajectory, SPEED_INDEX), 4.0)
}

/// Random path geometry for a user moving at `speed`.
///
/// The path count is uniform on `1..=max_paths`. Path powers follow an
/// exponential profile `exp(-l)` normalised to one; with probability
/// `los_prob` the first path instead carries half of the total power.
pub fn sample_path_set<R: Rng + ?Sized>(rng: &mut R, cfg: &PathModelConfig, speed: f64) -> PathSet {
    let count = rng.random_range(1..=cfg.max_paths);
    let los = rng.random::<f64>() < cfg.los_prob;
    let mut powers: Vec<f64> = (0..count).map(|l| (-(l as f64)).exp()).collect();
    if los && count > 1 {
        let rest: f64 = powers[1..].iter().sum();
        for p in &mut powers[1..] {
            *p *= 0.5 / rest;
        }
        powers[0] = 0.5;
    } else {
        let total: f64 = powers.iter().sum();
        for p in &mut powers {
            *p /= total;
        }
    }
    let f_max = cfg.max_doppler(speed);
    let paths = powers
        .into_iter()
        .map(|p| {
            let angle = rng.random_range(-PI / 2.0..PI / 2.0);
            let motion = rng.random_range(0.0..2.0 * PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            Path {
                gain: Complex64::new(p.sqrt(), 0.0),
                angle,
                doppler: f_max * motion.cos(),
                phase,
            }
        })
        .collect();
    PathSet { paths }
}

/// `h_i = sum_l g_l a(theta_l) exp(j (psi_l - 2 pi f_l i T))` for `i = 1..=snapshots`.
pub fn synthesize(set: &PathSet, antennas: usize, snapshots: usize, interval: f64) -> Vec<Vec<Complex64>> {
    let steering: Vec<Vec<Complex64>> = set
        .paths
        .iter()
        .map(|p| steering_vector(p.angle, antennas))
        .collect();
    (1..=snapshots)
        .map(|i| {
            let t = i as f64 * interval;
            let mut h = vec![Complex64::new(0.0, 0.0); antennas];
            for (p, a) in set.paths.iter().zip(&steering) {
                let rot = p.gain * Complex64::from_polar(1.0, p.phase - 2.0 * PI * p.doppler * t);
                for (hr, ar) in h.iter_mut().zip(a) {
                    *hr += rot * ar;
                }
            }
            h
        })
        .collect()
}

pub fn generate_trajectory(seed: u64, cfg: &PathModelConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let speed = match cfg.fixed_speed {
        Some(v) => v,
        None => rayleigh(
            &mut stream_rng(seed, Stream::Trajectory, SPEED_INDEX),
            cfg.speed_variance,
        ),
    };
    let mut rng = stream_rng(seed, Stream::Trajectory, GEOMETRY_INDEX);
    let set = sample_path_set(&mut rng, cfg, speed);
    let channels = synthesize(&set, cfg.antennas, cfg.snapshots, cfg.interval);
    Trajectory::new(
        channels,
        TrajectoryMeta {
            seed,
            speed: Some(speed),
            path_count: Some(set.paths.len()),
        },
    )
}
