//! Training loop: Adam on the negative ELBO, a one-shot plateau learning
//! rate schedule, fresh noise at a random SNR every epoch, and best-model
//! tracking on a fixed evaluation set.
//!
//! Every random draw of epoch `e` comes from a stream derived from
//! `(seed, stream, e)`, so the checkpoint after epoch `e` fully determines
//! the rest of the run.

mod adam;
mod checkpoint;

use diffcore::Tensor;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::chansim::{add_noise_with, ObservationSequence, Trajectory};
use crate::error::{Error, Result};
use crate::models::{elbo, loss_gradients, Architecture, Batch, Model};
use crate::seed::{stream_rng, Stream};

/// Relative ELBO improvement below which an epoch counts as stale.
pub const PLATEAU_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub plateau_patience_epochs: usize,
    pub lr_divisor: f64,
    pub max_lr_drops: usize,
    pub snr_range_db: [f64; 2],
    pub batch_size: usize,
    pub max_epochs: usize,
    pub free_bits: f64,
    pub seed: u64,
    /// Stop once the drops are used up and another plateau follows. Off by
    /// default.
    pub early_stop: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 6e-5,
            plateau_patience_epochs: 25,
            lr_divisor: 5.0,
            max_lr_drops: 1,
            snr_range_db: [-10.0, 25.0],
            batch_size: 128,
            max_epochs: 300,
            free_bits: 0.1,
            seed: 0,
            early_stop: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be positive", self.initial_lr)));
        }
        if !(self.lr_divisor >= 1.0) {
            return Err(Error::Config(format!("lr_divisor {} must be at least 1", self.lr_divisor)));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("SNR range [{lo}, {hi}] must be finite and ordered")));
        }
        if self.batch_size == 0 || self.plateau_patience_epochs == 0 {
            return Err(Error::Config("batch_size and plateau_patience_epochs must be positive".into()));
        }
        if !(self.free_bits >= 0.0 && self.free_bits.is_finite()) {
            return Err(Error::Config(format!("free_bits {} must be non-negative", self.free_bits)));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub lr: f64,
    pub drops: usize,
    /// Epochs since the last significant improvement.
    pub stale: usize,
    pub stop: bool,
}

/// Replays the plateau schedule over an eval-ELBO history.
pub fn schedule_state(history: &[f64], cfg: &TrainConfig) -> ScheduleState {
    let mut state = ScheduleState {
        lr: cfg.initial_lr,
        drops: 0,
        stale: 0,
        stop: false,
    };
    let mut best: Option<f64> = None;
    for &v in history {
        match best {
            None => best = Some(v),
            Some(b) if v - b > PLATEAU_RTOL * b.abs() => {
                best = Some(v);
                state.stale = 0;
            }
            Some(b) => {
                best = Some(b.max(v));
                state.stale += 1;
            }
        }
        if state.stale >= cfg.plateau_patience_epochs {
            if state.drops < cfg.max_lr_drops {
                state.drops += 1;
                state.lr /= cfg.lr_divisor;
                state.stale = 0;
            } else if cfg.early_stop {
                state.stop = true;
            }
        }
    }
    state
}

/// Learning rate for the epoch after `history`.
pub fn plateau_schedule(history: &[f64], cfg: &TrainConfig) -> f64 {
    schedule_state(history, cfg).lr
}

/// Training progress stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: usize,
    pub initial_eval_elbo: f64,
    /// Eval ELBO after each completed epoch.
    pub history: Vec<f64>,
    pub best_eval_elbo: f64,
    /// 0 when the initialization is still the best.
    pub best_epoch: usize,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub best: Vec<Tensor>,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub progress: Progress,
    /// Hash of the train and eval channels the run was started on.
    pub data_fingerprint: u64,
}

impl Checkpoint {
    pub fn architecture(&self) -> &Architecture {
        self.model.architecture()
    }

    /// Model with the best eval-ELBO parameters.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        m.params_mut().values_mut().clone_from_slice(&self.best);
        m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        checkpoint::decode(bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub train_elbo: f64,
    pub eval_elbo: f64,
    pub improved: bool,
}

/// FNV-1a over the bit patterns of every channel coefficient.
pub fn data_fingerprint(train: &[Trajectory], eval: &[Trajectory]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for set in [train, eval] {
        feed(set.len() as u64);
        for t in set {
            for c in t.channels().iter().flatten() {
                feed(c.re.to_bits());
                feed(c.im.to_bits());
            }
        }
    }
    h
}

fn draw_snr<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn noisy_set<R: Rng>(set: &[Trajectory], range: [f64; 2], mut snr_rng: R, mut noise_rng: R) -> Vec<ObservationSequence> {
    set.iter()
        .map(|t| add_noise_with(t, draw_snr(&mut snr_rng, range), &mut noise_rng))
        .collect()
}

/// Mean single-sample ELBO over a data set, in batches, with eps drawn in
/// order from `rng`.
pub fn mean_elbo<R: Rng + ?Sized>(
    model: &Model,
    clean: &[Vec<Vec<Complex64>>],
    noisy: &[ObservationSequence],
    batch_size: usize,
    free_bits: f64,
    rng: &mut R,
) -> Result<f64> {
    if clean.is_empty() || clean.len() != noisy.len() {
        return Err(Error::Contract("mean_elbo needs matching, non-empty sets".into()));
    }
    let mut total = 0.0;
    for start in (0..clean.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(clean.len());
        let c: Vec<&[Vec<Complex64>]> = clean[start..end].iter().map(Vec::as_slice).collect();
        let n: Vec<&[Vec<Complex64>]> = noisy[start..end].iter().map(|o| o.observations.as_slice()).collect();
        let batch = Batch::new(&c, &n)?;
        let eps = model.draw_eps(rng, batch.size());
        total += elbo(model, &batch, &eps, free_bits)? * batch.size() as f64;
    }
    Ok(total / clean.len() as f64)
}

pub struct Trainer<'a> {
    train: &'a [Trajectory],
    train_clean: Vec<Vec<Vec<Complex64>>>,
    eval_clean: Vec<Vec<Vec<Complex64>>>,
    eval_noisy: Vec<ObservationSequence>,
    names: Vec<String>,
    ckpt: Checkpoint,
}

impl<'a> Trainer<'a> {
    /// Fresh run: initializes the model from `cfg.seed` and evaluates it.
    pub fn new(arch: Architecture, train: &'a [Trajectory], eval: &[Trajectory], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(arch, cfg.seed)?;
        let params = model.params().values().to_vec();
        let ckpt = Checkpoint {
            adam: AdamState::new(&params, cfg.adam.clone()),
            best: params,
            model,
            config: cfg,
            progress: Progress {
                epoch: 0,
                initial_eval_elbo: f64::NAN,
                history: Vec::new(),
                best_eval_elbo: f64::NAN,
                best_epoch: 0,
                stopped: false,
            },
            data_fingerprint: data_fingerprint(train, eval),
        };
        let mut trainer = Self::prepare(ckpt, train, eval)?;
        let init = trainer.eval_elbo()?;
        if !init.is_finite() {
            return Err(Error::NonFinite(format!("eval ELBO at initialization is {init}")));
        }
        trainer.ckpt.progress.initial_eval_elbo = init;
        trainer.ckpt.progress.best_eval_elbo = init;
        Ok(trainer)
    }

    /// Continue from a checkpoint on the same data.
    pub fn resume(ckpt: Checkpoint, train: &'a [Trajectory], eval: &[Trajectory]) -> Result<Self> {
        ckpt.config.validate()?;
        if ckpt.data_fingerprint != data_fingerprint(train, eval) {
            return Err(Error::Incompatible("checkpoint was trained on different data".into()));
        }
        Self::prepare(ckpt, train, eval)
    }

    fn prepare(ckpt: Checkpoint, train: &'a [Trajectory], eval: &[Trajectory]) -> Result<Self> {
        let arch = ckpt.architecture();
        if train.is_empty() || eval.is_empty() {
            return Err(Error::InsufficientData("training needs non-empty train and eval sets".into()));
        }
        for t in train.iter().chain(eval) {
            if t.snapshots() != arch.snapshots || t.antennas() != arch.antennas {
                return Err(Error::Config(format!(
                    "trajectory is {}x{}, model expects I = {}, R = {}",
                    t.snapshots(),
                    t.antennas(),
                    arch.snapshots,
                    arch.antennas
                )));
            }
        }
        let cfg = &ckpt.config;
        // Eval SNRs and noise share the stream tag under distinct indices.
        let eval_noisy = noisy_set(
            eval,
            cfg.snr_range_db,
            stream_rng(cfg.seed, Stream::EvalNoise, 0),
            stream_rng(cfg.seed, Stream::EvalNoise, 1),
        );
        Ok(Self {
            train,
            train_clean: train.iter().map(Trajectory::dft_channels).collect(),
            eval_clean: eval.iter().map(Trajectory::dft_channels).collect(),
            eval_noisy,
            names: ckpt.model.params().names().to_vec(),
            ckpt,
        })
    }

    /// Eval-set ELBO without free bits, on fixed noise and fixed eps.
    pub fn eval_elbo(&self) -> Result<f64> {
        let cfg = &self.ckpt.config;
        let mut rng = stream_rng(cfg.seed, Stream::EvalEpsilon, 0);
        mean_elbo(&self.ckpt.model, &self.eval_clean, &self.eval_noisy, cfg.batch_size, 0.0, &mut rng)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    pub fn finished(&self) -> bool {
        self.ckpt.progress.stopped || self.ckpt.progress.epoch >= self.ckpt.config.max_epochs
    }

    /// One epoch. On a non-finite value the state is rolled back to the
    /// start of the epoch and the error returned.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let saved = self.ckpt.clone();
        let out = self.epoch_inner();
        if out.is_err() {
            self.ckpt = saved;
        }
        out
    }

    fn epoch_inner(&mut self) -> Result<EpochReport> {
        let epoch = self.ckpt.progress.epoch + 1;
        let cfg = self.ckpt.config.clone();
        let lr = plateau_schedule(&self.ckpt.progress.history, &cfg);
        let index = epoch as u64;
        let noisy = noisy_set(
            self.train,
            cfg.snr_range_db,
            stream_rng(cfg.seed, Stream::TrainSnr, index),
            stream_rng(cfg.seed, Stream::TrainNoise, index),
        );
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, index));
        let mut eps_rng = stream_rng(cfg.seed, Stream::TrainEpsilon, index);

        let mut train_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let c: Vec<&[Vec<Complex64>]> = chunk.iter().map(|&j| self.train_clean[j].as_slice()).collect();
            let n: Vec<&[Vec<Complex64>]> = chunk.iter().map(|&j| noisy[j].observations.as_slice()).collect();
            let batch = Batch::new(&c, &n)?;
            let eps = self.ckpt.model.draw_eps(&mut eps_rng, batch.size());
            let (value, grads) = loss_gradients(&self.ckpt.model, &batch, &eps, cfg.free_bits)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training ELBO is {value} in epoch {epoch}")));
            }
            let params = self.ckpt.model.params_mut().values_mut();
            adam_step(params, &grads, &self.names, &mut self.ckpt.adam, lr)?;
            train_total += value * chunk.len() as f64;
        }

        let eval_elbo = self.eval_elbo()?;
        if !eval_elbo.is_finite() {
            return Err(Error::NonFinite(format!("eval ELBO is {eval_elbo} in epoch {epoch}")));
        }
        let p = &mut self.ckpt.progress;
        p.epoch = epoch;
        p.history.push(eval_elbo);
        let improved = eval_elbo > p.best_eval_elbo;
        if improved {
            p.best_eval_elbo = eval_elbo;
            p.best_epoch = epoch;
            self.ckpt.best.clone_from_slice(self.ckpt.model.params().values());
        }
        p.stopped = schedule_state(&p.history, &cfg).stop;
        Ok(EpochReport {
            epoch,
            lr,
            train_elbo: train_total / self.train.len() as f64,
            eval_elbo,
            improved,
        })
    }

    /// Run until `max_epochs` or early stop, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochReport)) -> Result<()> {
        while !self.finished() {
            let report = self.run_epoch()?;
            on_epoch(&report);
        }
        Ok(())
    }
}

/// Train a fresh model to completion.
pub fn train(arch: Architecture, train: &[Trajectory], eval: &[Trajectory], cfg: TrainConfig) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(arch, train, eval, cfg)?;
    trainer.run(|_| {})?;
    Ok(trainer.into_checkpoint())
}
