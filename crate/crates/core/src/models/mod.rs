//! Memoryless VAE, trajectory VAE (TSVAE) and k-memory Markov VAE
//! (kMMVAE) networks, plus their training objectives.
//!
//! All three share the same building blocks. An encoder runs a conv stack
//! over the antenna axis of its observation window, flattens, optionally
//! appends the previous latent and maps through a fully-connected head to
//! a diagonal Gaussian. A decoder maps latents to the mean and per-bin
//! variance of a circularly-symmetric complex Gaussian over the DFT-domain
//! channel.
//!
//! The kMMVAE owns one encoder, prior and decoder per snapshot with no
//! sharing between snapshots. Its encoder at snapshot `i` sees
//! `y_{i-k..=i}` (truncated at the sequence start) and the previous latent;
//! at `i = 1` the latent input is an all-ones sentinel.

mod nets;
mod objective;

use diffcore::{Tape, Tensor};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};
use nets::{Binder, Builder, Decoder, Encoder, GaussVars, Prior, Stage};

pub use objective::{
    complex_gaussian_loglik, elbo, elbo_dvae, elbo_standard, kl_diag_gaussian, loss_gradients,
    reparameterize, Batch,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vae,
    Tsvae,
    Kmmvae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Tsvae => "tsvae",
            ModelKind::Kmmvae => "kmmvae",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vae" => Ok(ModelKind::Vae),
            "tsvae" => Ok(ModelKind::Tsvae),
            "kmmvae" => Ok(ModelKind::Kmmvae),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub antennas: usize,
    pub snapshots: usize,
    /// Memory `k`; only used by the kMMVAE.
    pub memory: usize,
    pub latent: usize,
    /// 1-based snapshot the TSVAE decoder targets.
    pub target: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of prior and decoder networks.
    pub hidden: Vec<usize>,
}

impl Architecture {
    fn base(kind: ModelKind, antennas: usize, snapshots: usize) -> Self {
        Self {
            kind,
            antennas,
            snapshots,
            memory: 1,
            latent: 16,
            target: snapshots,
            conv_channels: vec![16, 32],
            kernel: 7,
            encoder_hidden: vec![128],
            hidden: vec![128, 128],
        }
    }

    pub fn vae(antennas: usize, snapshots: usize) -> Self {
        Self::base(ModelKind::Vae, antennas, snapshots)
    }

    pub fn tsvae(antennas: usize, snapshots: usize) -> Self {
        Self::base(ModelKind::Tsvae, antennas, snapshots)
    }

    pub fn kmmvae(antennas: usize, snapshots: usize, memory: usize) -> Self {
        Self {
            memory,
            ..Self::base(ModelKind::Kmmvae, antennas, snapshots)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.snapshots == 0 || self.latent == 0 {
            return Err(Error::Config("R, I and d_z must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel width {} must be odd", self.kernel)));
        }
        if self.conv_channels.contains(&0) || self.encoder_hidden.contains(&0) || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.kind == ModelKind::Tsvae && !(1..=self.snapshots).contains(&self.target) {
            return Err(Error::Config(format!("target snapshot {} outside 1..={}", self.target, self.snapshots)));
        }
        Ok(())
    }

    /// Snapshots in the window ending at 1-based snapshot `i`.
    pub fn window(&self, i: usize) -> usize {
        self.memory.min(i - 1) + 1
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Mutable access for optimizers. Shapes must be preserved.
    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no parameter `{name}`")))?;
        if value.shape() != self.values[i].shape() {
            return Err(Error::Contract(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// Diagonal Gaussian over a real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Circularly-symmetric complex Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGaussian {
    pub mean: Vec<Complex64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    arch: Architecture,
    store: ParamStore,
    stages: Vec<Stage>,
}

impl Model {
    /// Fresh model with fan-in scaled uniform weights and zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut b = Builder::new(stream_rng(seed, Stream::Init, 0));
        let stages = match arch.kind {
            ModelKind::Vae => vec![build_stage(&mut b, &arch, "", 1, false, Prior::Standard)],
            ModelKind::Tsvae => {
                vec![build_stage(&mut b, &arch, "", arch.snapshots, false, Prior::Standard)]
            }
            ModelKind::Kmmvae => (1..=arch.snapshots)
                .map(|i| {
                    let d = arch.latent;
                    let prior = if i == 1 {
                        Prior::Learned {
                            mean: b.zeros("prior1.mean", &[1, d]),
                            log_std: b.zeros("prior1.log_std", &[1, d]),
                        }
                    } else {
                        Prior::Conditional(b.mlp(&format!("prior{i}"), d, &arch.hidden, 2 * d))
                    };
                    build_stage(&mut b, &arch, &i.to_string(), arch.window(i), true, prior)
                })
                .collect(),
        };
        Ok(Self {
            arch,
            store: b.store,
            stages,
        })
    }

    /// Rebuild a model from stored tensors, checking names and shapes.
    pub fn from_parts(arch: Architecture, names: &[String], values: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        if names != model.store.names.as_slice() {
            return Err(Error::Incompatible("parameter names do not match the architecture".into()));
        }
        for (v, t) in values.iter().zip(&model.store.values) {
            if v.shape() != t.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter shape {:?} does not match {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
        }
        model.store.values = values;
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn stage(&self, i: usize) -> Result<&Stage> {
        if i == 0 || i > self.arch.snapshots {
            return Err(Error::Contract(format!("snapshot {i} outside 1..={}", self.arch.snapshots)));
        }
        Ok(match self.arch.kind {
            ModelKind::Kmmvae => &self.stages[i - 1],
            _ => &self.stages[0],
        })
    }

    /// Standard-normal reparameterization noise for one batch, one tensor
    /// per sampled latent layer.
    pub fn draw_eps<R: rand::Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<Tensor> {
        let (count, rows) = match self.arch.kind {
            ModelKind::Kmmvae => (self.arch.snapshots, batch),
            ModelKind::Vae => (1, batch * self.arch.snapshots),
            ModelKind::Tsvae => (1, batch),
        };
        (0..count)
            .map(|_| {
                let data = (0..rows * self.arch.latent)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                Tensor::new(vec![rows, self.arch.latent], data).expect("positive shape")
            })
            .collect()
    }

    /// Posterior `q_{phi_i}` for one trajectory. `window` holds the
    /// DFT-domain observations of the encoder window, oldest first. The
    /// previous latent is ignored at `i = 1` (all-ones sentinel) and by
    /// memoryless models; a kMMVAE needs it for `i > 1`.
    pub fn encoder_step(&self, i: usize, z_prev: Option<&[f64]>, window: &[Vec<Complex64>]) -> Result<DiagGaussian> {
        let stage = self.stage(i)?;
        if window.len() != stage.encoder.window {
            return Err(Error::Contract(format!(
                "encoder {i} expects {} snapshots, got {}",
                stage.encoder.window,
                window.len()
            )));
        }
        let latent = if stage.encoder.takes_latent {
            Some(self.latent_input(i, z_prev)?)
        } else {
            None
        };
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, false);
        let parts: Vec<_> = window
            .iter()
            .map(|y| Ok(tape.constant(observation_tensor(&[y])?)))
            .collect::<Result<_>>()?;
        let x = tape.concat(&parts, 1)?;
        let z = latent.map(|z| tape.constant(Tensor::new(vec![1, z.len()], z).expect("latent")));
        let g = nets::encoder_forward(&mut tape, &mut bind, &stage.encoder, x, z, self.arch.latent)?;
        Ok(read_diag(&tape, g))
    }

    fn latent_input(&self, i: usize, z_prev: Option<&[f64]>) -> Result<Vec<f64>> {
        if i == 1 {
            return Ok(vec![1.0; self.arch.latent]);
        }
        let z = z_prev.ok_or_else(|| Error::Contract(format!("snapshot {i} needs the previous latent")))?;
        if z.len() != self.arch.latent {
            return Err(Error::Contract(format!("latent has length {}, expected {}", z.len(), self.arch.latent)));
        }
        Ok(z.to_vec())
    }

    /// Prior `p_{gamma_i}(z_i | z_{i-1})`; unconditional at `i = 1`.
    pub fn prior_step(&self, i: usize, z_prev: Option<&[f64]>) -> Result<DiagGaussian> {
        let stage = self.stage(i)?;
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, false);
        let z = match stage.prior {
            Prior::Conditional(_) => {
                let z = self.latent_input(i, z_prev)?;
                Some(tape.constant(Tensor::new(vec![1, z.len()], z).expect("latent")))
            }
            _ => None,
        };
        let g = nets::prior_forward(&mut tape, &mut bind, &stage.prior, z, 1, self.arch.latent)?;
        Ok(read_diag(&tape, g))
    }

    /// Decoder `p_{theta_i}(x_i | z_{i-k..=i})`, latents oldest first.
    pub fn decoder_step(&self, i: usize, z_window: &[Vec<f64>]) -> Result<ComplexGaussian> {
        let stage = self.stage(i)?;
        if z_window.len() != stage.decoder.window || z_window.iter().any(|z| z.len() != self.arch.latent) {
            return Err(Error::Contract(format!(
                "decoder {i} expects {} latents of length {}",
                stage.decoder.window, self.arch.latent
            )));
        }
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, false);
        let flat: Vec<f64> = z_window.concat();
        let z = tape.constant(Tensor::new(vec![1, flat.len()], flat).expect("latent"));
        let g = nets::decoder_forward(&mut tape, &mut bind, &stage.decoder, z, self.arch.antennas)?;
        Ok(read_complex(&tape, g).remove(0))
    }

    /// Posterior means `mu_{phi,1..=i}` of one kMMVAE trajectory, each step
    /// fed the previous mean instead of a sample.
    pub fn infer_mean_path(&self, observations: &[Vec<Complex64>]) -> Result<Vec<Vec<f64>>> {
        if self.arch.kind != ModelKind::Kmmvae {
            return Err(Error::Contract("mean-path inference needs a kMMVAE".into()));
        }
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, false);
        let noisy = self.observation_vars(&mut tape, &[observations], observations.len())?;
        let means = self.mean_path(&mut tape, &mut bind, &noisy, 1)?;
        Ok(means.into_iter().map(|m| tape.value(m).data().to_vec()).collect())
    }

    /// Decoder moments used by the LMMSE filter at 1-based `snapshot` for a
    /// batch of DFT-domain observation sequences. The kMMVAE decodes at
    /// the posterior mean path, the VAE from `y_snapshot` alone and the
    /// TSVAE from the whole sequence.
    pub fn conditional_moments(
        &self,
        observations: &[&[Vec<Complex64>]],
        snapshot: usize,
    ) -> Result<Vec<ComplexGaussian>> {
        let stage = self.stage(snapshot)?;
        let batch = observations.len();
        if batch == 0 {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, false);
        let d = self.arch.latent;
        let g = match self.arch.kind {
            ModelKind::Kmmvae => {
                let noisy = self.observation_vars(&mut tape, observations, snapshot)?;
                let means = self.mean_path(&mut tape, &mut bind, &noisy, batch)?;
                let w = stage.decoder.window;
                let z = concat_or_single(&mut tape, &means[snapshot - w..snapshot], 1)?;
                nets::decoder_forward(&mut tape, &mut bind, &stage.decoder, z, self.arch.antennas)?
            }
            ModelKind::Vae => {
                let rows: Vec<&[Complex64]> = observations
                    .iter()
                    .map(|o| seq_get(o, snapshot))
                    .collect::<Result<_>>()?;
                let y = tape.constant(observation_tensor(&rows)?);
                let q = nets::encoder_forward(&mut tape, &mut bind, &stage.encoder, y, None, d)?;
                nets::decoder_forward(&mut tape, &mut bind, &stage.decoder, q.mean, self.arch.antennas)?
            }
            ModelKind::Tsvae => {
                if snapshot != self.arch.target {
                    return Err(Error::Config(format!(
                        "TSVAE was trained for snapshot {}, not {snapshot}",
                        self.arch.target
                    )));
                }
                let noisy = self.observation_vars(&mut tape, observations, self.arch.snapshots)?;
                let y = tape.concat(&noisy, 1)?;
                let q = nets::encoder_forward(&mut tape, &mut bind, &stage.encoder, y, None, d)?;
                nets::decoder_forward(&mut tape, &mut bind, &stage.decoder, q.mean, self.arch.antennas)?
            }
        };
        Ok(read_complex(&tape, g))
    }

    fn observation_vars(
        &self,
        tape: &mut Tape,
        observations: &[&[Vec<Complex64>]],
        count: usize,
    ) -> Result<Vec<diffcore::Var>> {
        (1..=count)
            .map(|i| {
                let rows: Vec<&[Complex64]> = observations
                    .iter()
                    .map(|o| seq_get(o, i))
                    .collect::<Result<_>>()?;
                Ok(tape.constant(observation_tensor(&rows)?))
            })
            .collect()
    }

    fn mean_path(
        &self,
        tape: &mut Tape,
        bind: &mut Binder,
        noisy: &[diffcore::Var],
        batch: usize,
    ) -> Result<Vec<diffcore::Var>> {
        let mut means = Vec::with_capacity(noisy.len());
        let mut z_prev = tape.constant(Tensor::ones(&[batch, self.arch.latent]));
        for i in 1..=noisy.len() {
            let enc = &self.stage(i)?.encoder;
            let x = concat_or_single(tape, &noisy[i - enc.window..i], 1)?;
            let q = nets::encoder_forward(tape, bind, enc, x, Some(z_prev), self.arch.latent)?;
            means.push(q.mean);
            z_prev = q.mean;
        }
        Ok(means)
    }
}

fn build_stage<R: rand::Rng>(
    b: &mut Builder<R>,
    arch: &Architecture,
    tag: &str,
    window: usize,
    takes_latent: bool,
    prior: Prior,
) -> Stage {
    let (r, d) = (arch.antennas, arch.latent);
    let mut c_in = 2 * window;
    let mut convs = Vec::new();
    for (j, &c) in arch.conv_channels.iter().enumerate() {
        convs.push(b.conv(&format!("enc{tag}.conv{j}"), c_in, c, arch.kernel));
        c_in = c;
    }
    let flat = c_in * r + if takes_latent { d } else { 0 };
    let head = b.mlp(&format!("enc{tag}"), flat, &arch.encoder_hidden, 2 * d);
    let dec_window = if arch.kind == ModelKind::Kmmvae { window } else { 1 };
    let net = b.mlp(&format!("dec{tag}"), dec_window * d, &arch.hidden, 3 * r);
    Stage {
        encoder: Encoder {
            convs,
            head,
            window,
            takes_latent,
        },
        prior,
        decoder: Decoder {
            net,
            window: dec_window,
        },
    }
}

fn seq_get(seq: &[Vec<Complex64>], i: usize) -> Result<&[Complex64]> {
    seq.get(i - 1)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Contract(format!("sequence has {} snapshots, need {i}", seq.len())))
}

fn concat_or_single(tape: &mut Tape, parts: &[diffcore::Var], axis: usize) -> Result<diffcore::Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        Ok(tape.concat(parts, axis)?)
    }
}

/// `[B, 2, R]` with real parts in channel 0 and imaginary parts in channel 1.
pub(crate) fn observation_tensor(rows: &[&[Complex64]]) -> Result<Tensor> {
    let r = rows[0].len();
    if rows.iter().any(|y| y.len() != r) {
        return Err(Error::Contract("observations differ in length".into()));
    }
    let mut data = Vec::with_capacity(rows.len() * 2 * r);
    for y in rows {
        data.extend(y.iter().map(|c| c.re));
        data.extend(y.iter().map(|c| c.im));
    }
    Ok(Tensor::new(vec![rows.len(), 2, r], data)?)
}

/// `[B, 2R]` with real and imaginary parts interleaved.
pub(crate) fn channel_tensor(rows: &[&[Complex64]]) -> Result<Tensor> {
    let r = rows[0].len();
    if rows.iter().any(|x| x.len() != r) {
        return Err(Error::Contract("channels differ in length".into()));
    }
    let data = rows.iter().flat_map(|x| x.iter().flat_map(|c| [c.re, c.im])).collect();
    Ok(Tensor::new(vec![rows.len(), 2 * r], data)?)
}

fn read_diag(tape: &Tape, g: GaussVars) -> DiagGaussian {
    DiagGaussian {
        mean: tape.value(g.mean).data().to_vec(),
        log_std: tape.value(g.log_scale).data().to_vec(),
    }
}

fn read_complex(tape: &Tape, g: GaussVars) -> Vec<ComplexGaussian> {
    let mean = tape.value(g.mean);
    let log_var = tape.value(g.log_scale);
    let r = log_var.shape()[1];
    mean.data()
        .chunks(2 * r)
        .zip(log_var.data().chunks(r))
        .map(|(m, lv)| ComplexGaussian {
            mean: m.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect(),
            variance: lv.iter().map(|v| v.exp()).collect(),
        })
        .collect()
}
