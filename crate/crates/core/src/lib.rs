//! Channel estimation for time-varying SIMO channels with a k-memory
//! Markov variational autoencoder.
//!
//! * [`chansim`]: synthetic trajectories, noise, DFT front end, dataset files
//! * [`models`]: VAE, TSVAE and kMMVAE networks with their ELBOs
//! * [`estimators`]: LS, sample-covariance LMMSE, Kalman oracle and the
//!   VAE-family LMMSE estimators
//! * [`training`]: Adam, plateau schedule, training loop, checkpoints
//! * [`eval`]: NMSE, SNR and snapshot sweeps, CSV reports

pub mod chansim;
pub mod estimators;
pub mod eval;
mod error;
pub mod models;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
