use num_complex::Complex64;
use rand::Rng;

use super::{complex_gaussian, dft_preprocess, squared_norm, ObservationSequence, Trajectory};
use crate::seed::{stream_rng, Stream};

/// `sigma_n^2 = ||h_I||^2 / (R * 10^(snr_db / 10))`; zero at `+inf` dB.
pub fn noise_variance(trajectory: &Trajectory, snr_db: f64) -> f64 {
    let r = trajectory.antennas() as f64;
    squared_norm(trajectory.last()) / (r * 10f64.powf(snr_db / 10.0))
}

/// Noisy DFT-domain observations with independent white noise per snapshot.
pub fn add_noise(trajectory: &Trajectory, snr_db: f64, seed: u64) -> ObservationSequence {
    add_noise_with(trajectory, snr_db, &mut stream_rng(seed, Stream::TestNoise, 0))
}

pub fn add_noise_with<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    snr_db: f64,
    rng: &mut R,
) -> ObservationSequence {
    let noise_var = noise_variance(trajectory, snr_db);
    let observations = trajectory
        .channels()
        .iter()
        .map(|h| {
            let noisy: Vec<Complex64> = if noise_var > 0.0 {
                h.iter().map(|c| c + complex_gaussian(rng, noise_var)).collect()
            } else {
                h.clone()
            };
            dft_preprocess(&noisy)
        })
        .collect();
    ObservationSequence {
        observations,
        noise_var,
        snr_db,
    }
}
