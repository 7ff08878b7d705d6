//! Quick oracle checks on a fresh build.

use diffcore::Tensor;
use kmmvae::chansim::{add_noise, dft_preprocess, generate_gauss_markov, idft, GaussMarkovConfig, Trajectory};
use kmmvae::eval::{snapshot_sweep, Estimator};
use kmmvae::models::{elbo, loss_gradients, Architecture, Batch, Model};
use kmmvae::seed::{stream_rng, Stream};
use kmmvae::training::{Checkpoint, TrainConfig, Trainer};
use num_complex::Complex64;

#[derive(Debug)]
pub struct SelftestFailed(pub usize);

impl std::fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} self-test check(s) failed", self.0)
    }
}

impl std::error::Error for SelftestFailed {}

type Check = fn() -> anyhow::Result<(bool, String)>;

pub fn run() -> anyhow::Result<()> {
    let checks: [(&str, Check); 5] = [
        ("dft_unitary", dft_unitary),
        ("ls_inverse_snr", ls_inverse_snr),
        ("kalman_beats_memoryless", kalman_beats_memoryless),
        ("elbo_gradient", elbo_gradient),
        ("checkpoint_round_trip", checkpoint_round_trip),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e:#}")));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(SelftestFailed(failed).into());
    }
    Ok(())
}

fn gm_set(cfg: &GaussMarkovConfig, n: usize, i: usize) -> anyhow::Result<Vec<Trajectory>> {
    Ok((0..n as u64).map(|s| generate_gauss_markov(s, cfg, i)).collect::<kmmvae::Result<_>>()?)
}

fn dft_unitary() -> anyhow::Result<(bool, String)> {
    let x: Vec<Complex64> = (0..16).map(|k| Complex64::new((k as f64).sin(), (2.0 * k as f64).cos())).collect();
    let y = dft_preprocess(&x);
    let back = idft(&y);
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let nx: f64 = x.iter().map(|c| c.norm_sqr()).sum();
    let ny: f64 = y.iter().map(|c| c.norm_sqr()).sum();
    let ok = err < 1e-12 && (nx - ny).abs() < 1e-12 * nx;
    Ok((ok, format!("round-trip error {err:.1e}, norm ratio {:.15}", ny / nx)))
}

fn ls_inverse_snr() -> anyhow::Result<(bool, String)> {
    let test = gm_set(&GaussMarkovConfig::decaying(8, 0.9, 10.0), 4000, 2)?;
    let r = snapshot_sweep(&[Estimator::Ls], &test, 10.0, 1)?;
    let v = r.rows[1].nmse;
    Ok(((v / 0.1 - 1.0).abs() < 0.05, format!("NMSE {v:.5} at 10 dB, expected 0.1")))
}

fn kalman_beats_memoryless() -> anyhow::Result<(bool, String)> {
    let gm = GaussMarkovConfig::decaying(8, 0.9, 10.0);
    let test = gm_set(&gm, 1000, 4)?;
    let r = snapshot_sweep(&[Estimator::Kalman(gm.clone()), Estimator::Genie(gm)], &test, 10.0, 1)?;
    let get = |e: &str, i: usize| r.row(e, i, 10.0).map(|r| r.nmse).unwrap_or(f64::NAN);
    let (k1, g1, k4, g4) = (get("kalman", 1), get("genie", 1), get("kalman", 4), get("genie", 4));
    let ok = (k1 - g1).abs() < 1e-12 && k4 < g4;
    Ok((ok, format!("snapshot 4: kalman {k4:.5} < memoryless {g4:.5}")))
}

fn elbo_gradient() -> anyhow::Result<(bool, String)> {
    let arch = Architecture {
        latent: 2,
        conv_channels: vec![2],
        kernel: 3,
        encoder_hidden: vec![4],
        hidden: vec![4],
        ..Architecture::kmmvae(4, 3, 1)
    };
    let mut model = Model::new(arch.clone(), 1)?;
    // Deterministic non-zero values everywhere keep every unit off its kink.
    let mut j = 0usize;
    for t in model.params_mut().values_mut() {
        for v in t.data_mut() {
            j += 1;
            *v = 0.4 * (1.7 * j as f64 + 0.3).sin();
        }
    }
    let gm = GaussMarkovConfig::decaying(4, 0.8, 4.0);
    let trajs = gm_set(&gm, 3, 3)?;
    let clean: Vec<Vec<Vec<Complex64>>> = trajs.iter().map(Trajectory::dft_channels).collect();
    let noisy: Vec<_> = trajs.iter().enumerate().map(|(k, t)| add_noise(t, 5.0, k as u64)).collect();
    let c: Vec<&[Vec<Complex64>]> = clean.iter().map(Vec::as_slice).collect();
    let n: Vec<&[Vec<Complex64>]> = noisy.iter().map(|o| o.observations.as_slice()).collect();
    let batch = Batch::new(&c, &n)?;
    let eps = model.draw_eps(&mut stream_rng(3, Stream::TestNoise, 0), 3);
    let (_, grads) = loss_gradients(&model, &batch, &eps, 0.0)?;
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..model.params().len() {
        let mut fd = Tensor::zeros(model.params().values()[p].shape());
        for e in 0..fd.numel() {
            let orig = model.params().values()[p].data()[e];
            model.params_mut().values_mut()[p].data_mut()[e] = orig + step;
            let up = elbo(&model, &batch, &eps, 0.0)?;
            model.params_mut().values_mut()[p].data_mut()[e] = orig - step;
            let down = elbo(&model, &batch, &eps, 0.0)?;
            model.params_mut().values_mut()[p].data_mut()[e] = orig;
            // Gradients are of the loss, -ELBO.
            fd.data_mut()[e] = -(up - down) / (2.0 * step);
        }
        let diff: f64 = fd.data().iter().zip(grads[p].data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e} over {} tensors", grads.len())))
}

fn checkpoint_round_trip() -> anyhow::Result<(bool, String)> {
    let gm = GaussMarkovConfig::decaying(4, 0.9, 4.0);
    let data = gm_set(&gm, 20, 3)?;
    let arch = Architecture {
        latent: 2,
        conv_channels: vec![2],
        kernel: 3,
        encoder_hidden: vec![4],
        hidden: vec![4],
        ..Architecture::kmmvae(4, 3, 1)
    };
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        initial_lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(arch, &data[..16], &data[16..], cfg)?;
    trainer.run(|_| {})?;
    let bytes = trainer.checkpoint().to_bytes()?;
    let again = Checkpoint::from_bytes(&bytes)?.to_bytes()?;
    Ok((bytes == again, format!("{} bytes", bytes.len())))
}
