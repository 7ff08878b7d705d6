use std::f64::consts::PI;

use diffcore::testing::finite_difference;
use diffcore::Tensor;
use kmmvae::models::*;
use kmmvae::seed::{stream_rng, Stream};
use kmmvae::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn small(kind: ModelKind, r: usize, i: usize, k: usize, d: usize) -> Architecture {
    Architecture {
        kind,
        antennas: r,
        snapshots: i,
        memory: k,
        latent: d,
        target: i,
        conv_channels: vec![3, 4],
        kernel: 3,
        encoder_hidden: vec![6],
        hidden: vec![5, 5],
    }
}

fn complex_seq(seed: u64, snapshots: usize, r: usize, scale: f64) -> Vec<Vec<Complex64>> {
    let mut rng = stream_rng(seed, Stream::TestNoise, 0);
    (0..snapshots)
        .map(|_| {
            (0..r)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re, im) * scale
                })
                .collect()
        })
        .collect()
}

struct Data {
    clean: Vec<Vec<Vec<Complex64>>>,
    noisy: Vec<Vec<Vec<Complex64>>>,
}

impl Data {
    fn new(seed: u64, batch: usize, snapshots: usize, r: usize) -> Self {
        let clean: Vec<_> = (0..batch).map(|b| complex_seq(seed * 100 + b as u64, snapshots, r, 0.7)).collect();
        let noisy = clean
            .iter()
            .enumerate()
            .map(|(b, x)| {
                let n = complex_seq(seed * 100 + 50 + b as u64, snapshots, r, 0.3);
                x.iter().zip(n).map(|(xi, ni)| xi.iter().zip(ni).map(|(a, b)| a + b).collect()).collect()
            })
            .collect();
        Self { clean, noisy }
    }

    fn batch(&self) -> Batch {
        let c: Vec<&[Vec<Complex64>]> = self.clean.iter().map(Vec::as_slice).collect();
        let n: Vec<&[Vec<Complex64>]> = self.noisy.iter().map(Vec::as_slice).collect();
        Batch::new(&c, &n).unwrap()
    }
}

fn eps_for(model: &Model, batch: usize, seed: u64) -> Vec<Tensor> {
    model.draw_eps(&mut stream_rng(seed, Stream::TrainEpsilon, 0), batch)
}

fn row(t: &Tensor, b: usize) -> Vec<f64> {
    let w = t.shape()[1];
    t.data()[b * w..(b + 1) * w].to_vec()
}

fn kl_per_dim(q: &DiagGaussian, p: &DiagGaussian) -> Vec<f64> {
    (0..q.dim())
        .map(|d| {
            kl_diag_gaussian(
                &DiagGaussian {
                    mean: vec![q.mean[d]],
                    log_std: vec![q.log_std[d]],
                },
                &DiagGaussian {
                    mean: vec![p.mean[d]],
                    log_std: vec![p.log_std[d]],
                },
            )
        })
        .collect()
}

/// The sequential ELBO recomputed one trajectory at a time through the
/// single-sample step API, with free bits applied to batch-mean KLs.
fn scalar_dvae_elbo(model: &Model, data: &Data, eps: &[Tensor], free_bits: f64) -> f64 {
    let arch = model.architecture();
    let batch = data.clean.len();
    let mut ll = 0.0;
    let mut kl_mean = vec![vec![0.0; arch.latent]; arch.snapshots];
    for b in 0..batch {
        let mut zs: Vec<Vec<f64>> = Vec::new();
        for i in 1..=arch.snapshots {
            let w = arch.window(i);
            let window = &data.noisy[b][i - w..i];
            let prev = zs.last().map(Vec::as_slice);
            let q = model.encoder_step(i, prev, window).unwrap();
            let p = model.prior_step(i, prev).unwrap();
            zs.push(reparameterize(&q, &row(&eps[i - 1], b)));
            let g = model.decoder_step(i, &zs[i - w..i]).unwrap();
            ll += complex_gaussian_loglik(&data.clean[b][i - 1], &g);
            for (acc, v) in kl_mean[i - 1].iter_mut().zip(kl_per_dim(&q, &p)) {
                *acc += v / batch as f64;
            }
        }
    }
    let kl: f64 = kl_mean.iter().flatten().map(|v| v.max(free_bits)).sum();
    ll / batch as f64 - kl
}

#[test]
fn step_outputs_have_contract_shapes_and_bounds() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 3, 1, 4), 1).unwrap();
    let y = complex_seq(1, 3, 8, 50.0);
    let q = model.encoder_step(2, Some(&[9.0; 4]), &y[0..2]).unwrap();
    assert_eq!((q.mean.len(), q.log_std.len()), (4, 4));
    assert!(q.log_std.iter().all(|s| (-6.0..=3.0).contains(s)));
    let g = model.decoder_step(2, &[vec![0.1; 4], vec![-0.2; 4]]).unwrap();
    assert_eq!((g.mean.len(), g.variance.len()), (8, 8));
    assert!(g.variance.iter().all(|v| *v > 0.0));
    let p = model.prior_step(3, Some(&[100.0; 4])).unwrap();
    assert!(p.log_std.iter().all(|s| (-6.0..=3.0).contains(s)));
}

#[test]
fn first_snapshot_ignores_latent_history() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 3, 1, 4), 2).unwrap();
    let y = complex_seq(2, 1, 8, 1.0);
    let a = model.encoder_step(1, None, &y).unwrap();
    let b = model.encoder_step(1, Some(&[5.0, -1.0, 2.0, 0.0]), &y).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.prior_step(1, None).unwrap(), model.prior_step(1, Some(&[3.0; 4])).unwrap());
    assert_eq!(model.prior_step(1, None).unwrap(), DiagGaussian::standard(4));
}

#[test]
fn window_lengths_follow_memory_with_truncation() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 4, 2, 4), 3).unwrap();
    let y = complex_seq(3, 4, 8, 1.0);
    let z = [0.0; 4];
    for (i, w) in [(1, 1), (2, 2), (3, 3), (4, 3)] {
        assert_eq!(model.architecture().window(i), w);
        assert!(model.encoder_step(i, Some(&z), &y[i - w..i]).is_ok());
        assert!(matches!(model.encoder_step(i, Some(&z), &y[..w + 1]), Err(Error::Contract(_))));
    }
    assert!(matches!(model.decoder_step(3, &[z.to_vec()]), Err(Error::Contract(_))));
    assert!(matches!(model.encoder_step(2, None, &y[0..2]), Err(Error::Contract(_))));
}

#[test]
fn reparameterize_edge_cases() {
    let g = DiagGaussian {
        mean: vec![1.0, -2.0],
        log_std: vec![0.3, -1.0],
    };
    assert_eq!(reparameterize(&g, &[0.0, 0.0]), g.mean);
    let frozen = DiagGaussian {
        mean: vec![1.0, -2.0],
        log_std: vec![-800.0, -800.0],
    };
    assert_eq!(reparameterize(&frozen, &[3.0, -7.0]), frozen.mean);
}

#[test]
fn reparameterized_samples_match_moments() {
    let g = DiagGaussian {
        mean: vec![1.5],
        log_std: vec![0.4f64],
    };
    let mut rng = stream_rng(4, Stream::TrainEpsilon, 0);
    let n = 100_000;
    let s: Vec<f64> = (0..n).map(|_| reparameterize(&g, &[StandardNormal.sample(&mut rng)])[0]).collect();
    let mean = s.iter().sum::<f64>() / n as f64;
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((mean - 1.5).abs() / 1.5 < 0.01, "mean {mean}");
    assert!((std - 0.4f64.exp()).abs() / 0.4f64.exp() < 0.01, "std {std}");
}

#[test]
fn kl_closed_form_examples() {
    let p = DiagGaussian::standard(3);
    assert_eq!(kl_diag_gaussian(&p, &p), 0.0);
    let q = DiagGaussian {
        mean: vec![2.0; 3],
        log_std: vec![0.0; 3],
    };
    assert!((kl_diag_gaussian(&q, &p) - 6.0).abs() < 1e-15);
}

#[test]
fn kl_matches_monte_carlo() {
    let q = DiagGaussian {
        mean: vec![0.5, -1.0],
        log_std: vec![-0.3, 0.2],
    };
    let p = DiagGaussian {
        mean: vec![0.0, 0.4],
        log_std: vec![0.1, -0.2],
    };
    let log_density = |g: &DiagGaussian, z: &[f64]| -> f64 {
        (0..z.len())
            .map(|d| {
                let s = g.log_std[d].exp();
                -0.5 * (2.0 * PI).ln() - g.log_std[d] - (z[d] - g.mean[d]).powi(2) / (2.0 * s * s)
            })
            .sum()
    };
    let mut rng = stream_rng(5, Stream::TrainEpsilon, 0);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = reparameterize(&q, &eps);
        acc += log_density(&q, &z) - log_density(&p, &z);
    }
    let mc = acc / n as f64;
    let exact = kl_diag_gaussian(&q, &p);
    assert!((mc - exact).abs() / exact < 0.005, "mc {mc} exact {exact}");
}

proptest! {
    #[test]
    fn kl_is_nonnegative(m in prop::collection::vec(-5.0f64..5.0, 4), s in prop::collection::vec(-3.0f64..3.0, 4)) {
        let q = DiagGaussian { mean: m[..2].to_vec(), log_std: s[..2].to_vec() };
        let p = DiagGaussian { mean: m[2..].to_vec(), log_std: s[2..].to_vec() };
        prop_assert!(kl_diag_gaussian(&q, &p) >= -1e-12);
    }
}

#[test]
fn loglik_is_zero_at_unit_normalisation() {
    let g = ComplexGaussian {
        mean: vec![Complex64::new(0.3, -1.0); 4],
        variance: vec![1.0 / PI; 4],
    };
    assert!(complex_gaussian_loglik(&g.mean, &g).abs() < 1e-14);
    let near = complex_gaussian_loglik(&[Complex64::new(0.4, -1.0); 4], &g);
    let far = complex_gaussian_loglik(&[Complex64::new(0.9, -1.0); 4], &g);
    assert!(near < 0.0 && far < near);
}

#[test]
fn loglik_density_integrates_to_one() {
    let g = ComplexGaussian {
        mean: vec![Complex64::new(0.2, -0.1)],
        variance: vec![0.7],
    };
    let (lo, hi, n) = (-6.0, 6.0, 1200);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let x = Complex64::new(lo + (a as f64 + 0.5) * h, lo + (b as f64 + 0.5) * h);
            total += complex_gaussian_loglik(&[x], &g).exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-6, "integral {total}");
}

#[test]
fn batched_dvae_elbo_matches_step_recomputation() {
    for (k, free_bits) in [(1, 0.0), (2, 0.0), (1, 0.1), (0, 0.05)] {
        let model = Model::new(small(ModelKind::Kmmvae, 8, 4, k, 4), 6).unwrap();
        let data = Data::new(6, 3, 4, 8);
        let eps = eps_for(&model, 3, 6);
        let batched = elbo_dvae(&model, &data.batch(), &eps, free_bits).unwrap();
        let scalar = scalar_dvae_elbo(&model, &data, &eps, free_bits);
        assert!((batched - scalar).abs() < 1e-10 * scalar.abs().max(1.0), "k={k}: {batched} vs {scalar}");
    }
}

#[test]
fn loss_gradient_value_matches_elbo() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 3, 1, 4), 7).unwrap();
    let data = Data::new(7, 2, 3, 8);
    let eps = eps_for(&model, 2, 7);
    let (value, grads) = loss_gradients(&model, &data.batch(), &eps, 0.1).unwrap();
    assert_eq!(value, elbo(&model, &data.batch(), &eps, 0.1).unwrap());
    assert_eq!(grads.len(), model.params().len());
}

/// Zero-initialised biases put relu inputs of dead upstream layers exactly
/// on the kink, where central differences return half the slope. Random
/// instances move them off it.
fn jitter_biases(model: &Model, seed: u64) -> Model {
    let mut out = model.clone();
    let mut rng = stream_rng(seed, Stream::Init, 7);
    let names = out.params().names().to_vec();
    for (name, t) in names.iter().zip(out.params_mut().values_mut()) {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    out
}

fn fd_check(model: &Model, data: &Data, eps: &[Tensor], free_bits: f64) -> Vec<(String, f64)> {
    let model = &jitter_biases(model, 1);
    let batch = data.batch();
    let (_, grads) = loss_gradients(model, &batch, eps, free_bits).unwrap();
    let values = model.params().values().to_vec();
    let mut work = model.clone();
    let numeric = finite_difference(&values, 1e-6, |ts| {
        work.params_mut().values_mut().clone_from_slice(ts);
        -elbo(&work, &batch, eps, free_bits).unwrap()
    });
    model
        .params()
        .names()
        .iter()
        .zip(grads.iter().zip(&numeric))
        .map(|(name, (a, n))| {
            let diff: f64 = a.data().iter().zip(n.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = n.data().iter().map(|y| y * y).sum::<f64>().sqrt();
            (name.clone(), diff / scale.max(1e-8))
        })
        .collect()
}

#[test]
fn kmmvae_gradients_match_finite_differences() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 3, 1, 4), 8).unwrap();
    let data = Data::new(8, 2, 3, 8);
    let eps = eps_for(&model, 2, 8);
    for (name, err) in fd_check(&model, &data, &eps, 0.1) {
        assert!(err < 1e-5, "{name}: relative error {err}");
    }
}

#[test]
fn standard_model_gradients_match_finite_differences() {
    for kind in [ModelKind::Vae, ModelKind::Tsvae] {
        let model = Model::new(small(kind, 8, 3, 1, 4), 9).unwrap();
        let data = Data::new(9, 2, 3, 8);
        let eps = eps_for(&model, 2, 9);
        for (name, err) in fd_check(&model, &data, &eps, 0.1) {
            assert!(err < 1e-5, "{kind:?} {name}: relative error {err}");
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for kind in [ModelKind::Kmmvae, ModelKind::Vae, ModelKind::Tsvae] {
        let model = Model::new(Architecture { latent: 4, ..arch_default(kind) }, 10).unwrap();
        let data = Data::new(10, 4, 4, 16);
        let eps = eps_for(&model, 4, 10);
        let (_, grads) = loss_gradients(&model, &data.batch(), &eps, 0.0).unwrap();
        for (name, g) in model.params().names().iter().zip(&grads) {
            assert!(g.all_finite(), "{name} not finite");
            assert!(g.data().iter().any(|v| *v != 0.0), "{kind:?} {name} has zero gradient");
        }
    }
}

fn arch_default(kind: ModelKind) -> Architecture {
    match kind {
        ModelKind::Vae => Architecture::vae(16, 4),
        ModelKind::Tsvae => Architecture::tsvae(16, 4),
        ModelKind::Kmmvae => Architecture::kmmvae(16, 4, 1),
    }
}

fn zero_param(model: &mut Model, name: &str) {
    let shape = model.params().get(name).unwrap().shape().to_vec();
    model.params_mut().set(name, Tensor::zeros(&shape)).unwrap();
}

/// Copy the memoryless stage of a kMMVAE at snapshot `i` into a VAE. The
/// sentinel or latent input rows of the first encoder layer are assumed
/// zeroed, so the conv features alone drive the head.
fn vae_from_stage(kmm: &Model, i: usize, r: usize, d: usize) -> Model {
    let mut vae = Model::new(small(ModelKind::Vae, r, 1, 0, d), 0).unwrap();
    for name in vae.params().names().to_vec() {
        let src_name = name.replacen("enc", &format!("enc{i}"), 1).replacen("dec", &format!("dec{i}"), 1);
        let src = kmm.params().get(&src_name).unwrap();
        let dst = vae.params().get(&name).unwrap();
        let value = if src.shape() == dst.shape() {
            src.clone()
        } else {
            // First head layer: drop the trailing latent rows.
            let keep = dst.numel();
            Tensor::new(dst.shape().to_vec(), src.data()[..keep].to_vec()).unwrap()
        };
        vae.params_mut().set(&name, value).unwrap();
    }
    vae
}

fn single_snapshot(data: &Data, i: usize) -> Data {
    Data {
        clean: data.clean.iter().map(|s| vec![s[i - 1].clone()]).collect(),
        noisy: data.noisy.iter().map(|s| vec![s[i - 1].clone()]).collect(),
    }
}

#[test]
fn single_snapshot_dvae_equals_standard_elbo() {
    let (r, d) = (8, 4);
    let kmm = Model::new(small(ModelKind::Kmmvae, r, 1, 0, d), 11).unwrap();
    // Fold the all-ones sentinel into the first head bias.
    let w = kmm.params().get("enc1.fc0.w").unwrap().clone();
    let b = kmm.params().get("enc1.fc0.b").unwrap().clone();
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut bias = b.data().to_vec();
    for row in rows - d..rows {
        for c in 0..cols {
            bias[c] += w.data()[row * cols + c];
        }
    }
    let mut vae = vae_from_stage(&kmm, 1, r, d);
    vae.params_mut().set("enc.fc0.b", Tensor::vector(bias)).unwrap();
    let data = Data::new(11, 3, 1, r);
    let eps = eps_for(&kmm, 3, 11);
    for free_bits in [0.0, 0.1] {
        let a = elbo_dvae(&kmm, &data.batch(), &eps, free_bits).unwrap();
        let b = elbo_standard(&vae, &data.batch(), &eps, free_bits).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn memoryless_dvae_is_a_sum_of_standard_elbos() {
    let (r, i_max, d) = (8, 3, 4);
    let mut kmm = Model::new(small(ModelKind::Kmmvae, r, i_max, 0, d), 12).unwrap();
    // Encoders ignore the latent input; transition priors output N(0, I).
    for i in 1..=i_max {
        let name = format!("enc{i}.fc0.w");
        let mut w = kmm.params().get(&name).unwrap().clone();
        let cols = w.shape()[1];
        let rows = w.shape()[0];
        for v in &mut w.data_mut()[(rows - d) * cols..] {
            *v = 0.0;
        }
        kmm.params_mut().set(&name, w).unwrap();
        if i > 1 {
            zero_param(&mut kmm, &format!("prior{i}.fc2.w"));
            zero_param(&mut kmm, &format!("prior{i}.fc2.b"));
        }
    }
    let data = Data::new(12, 3, i_max, r);
    let eps = eps_for(&kmm, 3, 12);
    let total = elbo_dvae(&kmm, &data.batch(), &eps, 0.0).unwrap();
    let mut sum = 0.0;
    for i in 1..=i_max {
        let vae = vae_from_stage(&kmm, i, r, d);
        let one = single_snapshot(&data, i);
        sum += elbo_standard(&vae, &one.batch(), &[eps[i - 1].clone()], 0.0).unwrap();
    }
    assert!((total - sum).abs() < 1e-10, "{total} vs {sum}");
}

#[test]
fn free_bits_floor_each_snapshot_kl() {
    // Encoders collapsed onto the standard-normal priors: every KL is zero,
    // so the floor costs exactly lambda * d_z per snapshot.
    let (r, i_max, d) = (8, 3, 4);
    let mut kmm = Model::new(small(ModelKind::Kmmvae, r, i_max, 1, d), 13).unwrap();
    for i in 1..=i_max {
        zero_param(&mut kmm, &format!("enc{i}.fc1.w"));
        zero_param(&mut kmm, &format!("enc{i}.fc1.b"));
        if i > 1 {
            zero_param(&mut kmm, &format!("prior{i}.fc2.w"));
            zero_param(&mut kmm, &format!("prior{i}.fc2.b"));
        }
    }
    let data = Data::new(13, 2, i_max, r);
    let eps = eps_for(&kmm, 2, 13);
    let plain = elbo_dvae(&kmm, &data.batch(), &eps, 0.0).unwrap();
    let floored = elbo_dvae(&kmm, &data.batch(), &eps, 0.1).unwrap();
    assert!((plain - floored - 0.1 * (d * i_max) as f64).abs() < 1e-10);
}

#[test]
fn zero_kl_standard_elbo_is_decoder_loglik() {
    let (r, d) = (8, 4);
    let mut vae = Model::new(small(ModelKind::Vae, r, 2, 0, d), 14).unwrap();
    zero_param(&mut vae, "enc.fc1.w");
    zero_param(&mut vae, "enc.fc1.b");
    zero_param(&mut vae, "dec.fc2.w");
    let mut bias = vec![0.0; 3 * r];
    for j in 0..r {
        bias[2 * j] = 0.1 * j as f64;
        bias[2 * r + j] = -0.2;
    }
    vae.params_mut().set("dec.fc2.b", Tensor::vector(bias.clone())).unwrap();
    let g = ComplexGaussian {
        mean: (0..r).map(|j| Complex64::new(0.1 * j as f64, 0.0)).collect(),
        variance: vec![(-0.2f64).exp(); r],
    };
    let data = Data::new(14, 3, 2, r);
    let eps = eps_for(&vae, 3, 14);
    let value = elbo_standard(&vae, &data.batch(), &eps, 0.0).unwrap();
    let expected: f64 = data
        .clean
        .iter()
        .map(|s| s.iter().map(|x| complex_gaussian_loglik(x, &g)).sum::<f64>())
        .sum::<f64>()
        / 3.0;
    assert!((value - expected).abs() < 1e-10, "{value} vs {expected}");
}

#[test]
fn mean_path_is_deterministic_and_causal() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 4, 1, 4), 15).unwrap();
    let y = complex_seq(15, 4, 8, 1.0);
    let a = model.infer_mean_path(&y).unwrap();
    assert_eq!(a, model.infer_mean_path(&y).unwrap());
    let mut edited = y.clone();
    edited[3] = complex_seq(99, 1, 8, 5.0).remove(0);
    edited[2][0] += Complex64::new(3.0, 0.0);
    let b = model.infer_mean_path(&edited).unwrap();
    assert_eq!(a[..2], b[..2]);
    assert_ne!(a[2], b[2]);
    let first = model.infer_mean_path(&y[..1]).unwrap();
    assert_eq!(first[0], a[0]);
}

#[test]
fn mean_path_equals_zero_noise_sampling() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 3, 1, 4), 16).unwrap();
    let y = complex_seq(16, 3, 8, 1.0);
    let means = model.infer_mean_path(&y).unwrap();
    let mut prev: Option<Vec<f64>> = None;
    for i in 1..=3 {
        let w = model.architecture().window(i);
        let q = model.encoder_step(i, prev.as_deref(), &y[i - w..i]).unwrap();
        let z = reparameterize(&q, &[0.0; 4]);
        assert_eq!(z, means[i - 1]);
        prev = Some(z);
    }
}

#[test]
fn conditional_moments_agree_with_step_api() {
    let model = Model::new(small(ModelKind::Kmmvae, 8, 3, 1, 4), 17).unwrap();
    let seqs: Vec<_> = (0..3).map(|s| complex_seq(170 + s, 3, 8, 1.0)).collect();
    let refs: Vec<&[Vec<Complex64>]> = seqs.iter().map(Vec::as_slice).collect();
    let batched = model.conditional_moments(&refs, 3).unwrap();
    for (s, g) in seqs.iter().zip(&batched) {
        let means = model.infer_mean_path(s).unwrap();
        let single = model.decoder_step(3, &means[1..3]).unwrap();
        for (a, b) in g.mean.iter().zip(&single.mean) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in g.variance.iter().zip(&single.variance) {
            assert!((a - b).abs() < 1e-12 * b);
        }
    }
}

#[test]
fn initialisation_is_seeded() {
    let arch = small(ModelKind::Kmmvae, 8, 3, 1, 4);
    let a = Model::new(arch.clone(), 1).unwrap();
    assert_eq!(a.params(), Model::new(arch.clone(), 1).unwrap().params());
    assert_ne!(a.params(), Model::new(arch, 2).unwrap().params());
}

#[test]
fn default_encoder_widths_follow_memory() {
    let model = Model::new(Architecture::kmmvae(32, 8, 1), 0).unwrap();
    assert_eq!(model.params().get("enc1.conv0.k").unwrap().shape(), [16, 2, 7]);
    assert_eq!(model.params().get("enc2.conv0.k").unwrap().shape(), [16, 4, 7]);
    assert_eq!(model.params().get("enc2.fc0.w").unwrap().shape(), [32 * 32 + 16, 128]);
    assert_eq!(model.params().get("dec2.fc0.w").unwrap().shape(), [32, 128]);
    assert_eq!(model.params().get("dec1.fc0.w").unwrap().shape(), [16, 128]);
    let ts = Model::new(Architecture::tsvae(32, 8), 0).unwrap();
    assert_eq!(ts.params().get("enc.conv0.k").unwrap().shape(), [16, 16, 7]);
}
