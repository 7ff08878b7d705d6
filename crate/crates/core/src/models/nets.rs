//! Layer descriptors and their forward passes on a tape.
//!
//! Layers only hold indices into the model's parameter store; a [`Binder`]
//! places the referenced tensors on the tape the first time they are used.

use diffcore::{Tape, Tensor, Var};
use rand::Rng;

use super::ParamStore;
use crate::error::Result;

pub(crate) const LOG_STD_MIN: f64 = -6.0;
pub(crate) const LOG_STD_MAX: f64 = 3.0;
pub(crate) const LOG_VAR_MIN: f64 = 2.0 * LOG_STD_MIN;
pub(crate) const LOG_VAR_MAX: f64 = 2.0 * LOG_STD_MAX;

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub k: usize,
    pub b: usize,
}

/// Fully-connected stack, relu between layers, linear output.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub convs: Vec<Conv>,
    pub head: Mlp,
    /// Observation snapshots consumed.
    pub window: usize,
    pub takes_latent: bool,
}

#[derive(Debug, Clone)]
pub(crate) enum Prior {
    Standard,
    Learned { mean: usize, log_std: usize },
    Conditional(Mlp),
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    pub net: Mlp,
    /// Latents consumed, oldest first.
    pub window: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Stage {
    pub encoder: Encoder,
    pub prior: Prior,
    pub decoder: Decoder,
}

/// Mean and log-scale pair living on a tape. For decoders `log_scale` is
/// a log-variance, for encoders and priors a log-std.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussVars {
    pub mean: Var,
    pub log_scale: Var,
}

pub(crate) struct Builder<R> {
    pub store: ParamStore,
    rng: R,
}

impl<R: Rng> Builder<R> {
    pub fn new(rng: R) -> Self {
        Self {
            store: ParamStore::default(),
            rng,
        }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("non-empty shape")
    }

    pub fn dense(&mut self, name: &str, input: usize, output: usize) -> Dense {
        let w = self.uniform(&[input, output], input);
        let w = self.store.push(format!("{name}.w"), w);
        let b = self.store.push(format!("{name}.b"), Tensor::zeros(&[output]));
        Dense { w, b }
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, width: usize) -> Conv {
        let k = self.uniform(&[c_out, c_in, width], c_in * width);
        let k = self.store.push(format!("{name}.k"), k);
        let b = self.store.push(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv { k, b }
    }

    pub fn mlp(&mut self, name: &str, input: usize, hidden: &[usize], output: usize) -> Mlp {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(j, w)| self.dense(&format!("{name}.fc{j}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.store.push(name.to_string(), Tensor::zeros(shape))
    }
}

/// Lazily binds store tensors onto a tape.
pub(crate) struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn get(&mut self, tape: &mut Tape, idx: usize) -> Var {
        *self.vars[idx].get_or_insert_with(|| {
            let value = self.store.values[idx].clone();
            if self.trainable {
                tape.param(value)
            } else {
                tape.constant(value)
            }
        })
    }

    /// Gradients in store order; parameters never touched get zeros.
    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&self.store.values)
            .map(|(v, t)| {
                v.and_then(|v| tape.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }
}

fn split_gaussian(tape: &mut Tape, out: Var, dim: usize, lo: f64, hi: f64) -> Result<GaussVars> {
    let mean = tape.slice(out, 1, 0, dim)?;
    let raw = tape.slice(out, 1, dim, 2 * dim)?;
    let log_scale = tape.clamp(raw, lo, hi)?;
    Ok(GaussVars { mean, log_scale })
}

pub(crate) fn mlp_forward(tape: &mut Tape, bind: &mut Binder, mlp: &Mlp, mut x: Var) -> Result<Var> {
    let n = mlp.layers.len();
    for (j, layer) in mlp.layers.iter().enumerate() {
        let (w, b) = (bind.get(tape, layer.w), bind.get(tape, layer.b));
        x = tape.affine(x, w, b)?;
        if j + 1 < n {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

/// `window` is `[B, 2 * enc.window, R]`; `latent` is `[B, d_z]` when the
/// encoder takes one.
pub(crate) fn encoder_forward(
    tape: &mut Tape,
    bind: &mut Binder,
    enc: &Encoder,
    window: Var,
    latent: Option<Var>,
    dim: usize,
) -> Result<GaussVars> {
    let mut h = window;
    for conv in &enc.convs {
        let (k, b) = (bind.get(tape, conv.k), bind.get(tape, conv.b));
        h = tape.conv1d(h, k, b)?;
        h = tape.relu(h)?;
    }
    let shape = tape.shape(h).to_vec();
    let mut flat = tape.reshape(h, &[shape[0], shape[1] * shape[2]])?;
    if let Some(z) = latent {
        flat = tape.concat(&[flat, z], 1)?;
    }
    let out = mlp_forward(tape, bind, &enc.head, flat)?;
    split_gaussian(tape, out, dim, LOG_STD_MIN, LOG_STD_MAX)
}

pub(crate) fn prior_forward(
    tape: &mut Tape,
    bind: &mut Binder,
    prior: &Prior,
    latent: Option<Var>,
    batch: usize,
    dim: usize,
) -> Result<GaussVars> {
    match prior {
        Prior::Standard => {
            let mean = tape.constant(Tensor::zeros(&[batch, dim]));
            let log_scale = tape.constant(Tensor::zeros(&[batch, dim]));
            Ok(GaussVars { mean, log_scale })
        }
        Prior::Learned { mean, log_std } => {
            let ones = tape.constant(Tensor::ones(&[batch, 1]));
            let (m, s) = (bind.get(tape, *mean), bind.get(tape, *log_std));
            let mean = tape.matmul(ones, m)?;
            let raw = tape.matmul(ones, s)?;
            let log_scale = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
            Ok(GaussVars { mean, log_scale })
        }
        Prior::Conditional(net) => {
            let z = latent.expect("conditional prior needs the previous latent");
            let out = mlp_forward(tape, bind, net, z)?;
            split_gaussian(tape, out, dim, LOG_STD_MIN, LOG_STD_MAX)
        }
    }
}

/// Returns the interleaved `[B, 2R]` mean and `[B, R]` log-variance.
pub(crate) fn decoder_forward(
    tape: &mut Tape,
    bind: &mut Binder,
    dec: &Decoder,
    latents: Var,
    antennas: usize,
) -> Result<GaussVars> {
    let out = mlp_forward(tape, bind, &dec.net, latents)?;
    let mean = tape.slice(out, 1, 0, 2 * antennas)?;
    let raw = tape.slice(out, 1, 2 * antennas, 3 * antennas)?;
    let log_scale = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok(GaussVars { mean, log_scale })
}
