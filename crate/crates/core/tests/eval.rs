use kmmvae::chansim::{generate_gauss_markov, GaussMarkovConfig, Trajectory};
use kmmvae::eval::{
    format_sig6, nmse, nmse_samples, snapshot_sweep, snr_sweep, test_observations, Estimator, CSV_HEADER,
    DEFAULT_SNR_GRID,
};
use kmmvae::models::{Architecture, Model, ModelKind};
use kmmvae::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn gm() -> GaussMarkovConfig {
    GaussMarkovConfig::decaying(8, 0.9, 10.0)
}

fn gm_set(offset: u64, n: usize, i: usize) -> Vec<Trajectory> {
    (0..n as u64).map(|s| generate_gauss_markov(offset + s, &gm(), i).unwrap()).collect()
}

fn small_model(kind: ModelKind) -> Model {
    let arch = Architecture {
        latent: 3,
        conv_channels: vec![3],
        kernel: 3,
        encoder_hidden: vec![6],
        hidden: vec![5],
        ..match kind {
            ModelKind::Kmmvae => Architecture::kmmvae(8, 3, 1),
            ModelKind::Vae => Architecture::vae(8, 3),
            ModelKind::Tsvae => Architecture::tsvae(8, 3),
        }
    };
    Model::new(arch, 3).unwrap()
}

fn cvec(v: &[(f64, f64)]) -> Vec<Complex64> {
    v.iter().map(|&(a, b)| Complex64::new(a, b)).collect()
}

#[test]
fn nmse_of_exact_and_zero_estimates() {
    let h = vec![cvec(&[(1.0, 2.0), (-0.5, 0.0)]), cvec(&[(0.0, 3.0), (1.0, 1.0)])];
    let truths: Vec<&[Complex64]> = h.iter().map(Vec::as_slice).collect();
    assert_eq!(nmse(&h, &truths).unwrap(), 0.0);
    let zero = vec![vec![Complex64::new(0.0, 0.0); 2]; 2];
    assert_eq!(nmse(&zero, &truths).unwrap(), 1.0);
}

#[test]
fn nmse_hand_example() {
    // ||(1, 0) - (0, 0)||^2 / 1 = 1 and ||(2i) - (i)||^2 / 4 = 1/4.
    let truths = [cvec(&[(1.0, 0.0)]), cvec(&[(0.0, 2.0)])];
    let est = vec![cvec(&[(0.0, 0.0)]), cvec(&[(0.0, 1.0)])];
    let t: Vec<&[Complex64]> = truths.iter().map(Vec::as_slice).collect();
    assert_eq!(nmse_samples(&est, &t).unwrap(), vec![1.0, 0.25]);
    assert_eq!(nmse(&est, &t).unwrap(), 0.625);
}

#[test]
fn nmse_input_errors() {
    let zero = [vec![Complex64::new(0.0, 0.0); 2]];
    let t: Vec<&[Complex64]> = zero.iter().map(Vec::as_slice).collect();
    assert!(matches!(nmse(&zero, &t), Err(Error::Degenerate(_))));
    let h = [cvec(&[(1.0, 0.0), (1.0, 0.0)])];
    let t: Vec<&[Complex64]> = h.iter().map(Vec::as_slice).collect();
    assert!(matches!(nmse(&[cvec(&[(1.0, 0.0)])], &t), Err(Error::Contract(_))));
    assert!(matches!(nmse(&[], &t), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn nmse_is_scale_invariant(
        pairs in prop::collection::vec(prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 4), 1..6),
        scale in prop::sample::select(vec![-7.5, -0.01, 0.3, 2.0, 1e4]),
        phase in 0.0f64..6.3,
    ) {
        let h: Vec<Vec<Complex64>> = pairs.iter().map(|p| p.iter().map(|q| Complex64::new(q.0 + 0.1, q.1)).collect()).collect();
        let e: Vec<Vec<Complex64>> = pairs.iter().map(|p| p.iter().map(|q| Complex64::new(q.2, q.3)).collect()).collect();
        let c = Complex64::from_polar(scale, phase);
        let hs: Vec<Vec<Complex64>> = h.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let es: Vec<Vec<Complex64>> = e.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let t: Vec<&[Complex64]> = h.iter().map(Vec::as_slice).collect();
        let ts: Vec<&[Complex64]> = hs.iter().map(Vec::as_slice).collect();
        let a = nmse(&e, &t).unwrap();
        let b = nmse(&es, &ts).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        // Direct double-loop evaluation.
        let mut direct = 0.0;
        for (hv, ev) in h.iter().zip(&e) {
            let mut num = 0.0;
            let mut den = 0.0;
            for (x, y) in hv.iter().zip(ev) {
                num += (x.re - y.re).powi(2) + (x.im - y.im).powi(2);
                den += x.re * x.re + x.im * x.im;
            }
            direct += num / den;
        }
        prop_assert!((a - direct / h.len() as f64).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn ls_row_follows_inverse_snr() {
    let test = gm_set(0, 10_000, 2);
    let report = snr_sweep(&[Estimator::Ls], &test, &[0.0, 10.0, 20.0], None, 4).unwrap();
    for (row, expected) in report.rows.iter().zip([1.0, 0.1, 0.01]) {
        assert!((row.nmse / expected - 1.0).abs() < 0.02, "{row:?}");
        assert_eq!(row.n_t, 10_000);
        assert_eq!(row.snapshot, 2);
    }
}

#[test]
fn sweep_row_counts_and_order() {
    let test = gm_set(0, 20, 3);
    let ests = vec![
        Estimator::Ls,
        Estimator::Genie(gm()),
        Estimator::Kalman(gm()),
        Estimator::model(small_model(ModelKind::Kmmvae)),
    ];
    let r = snr_sweep(&ests, &test, &DEFAULT_SNR_GRID, None, 1).unwrap();
    assert_eq!(r.rows.len(), ests.len() * DEFAULT_SNR_GRID.len());
    let keys: Vec<(String, f64)> = r.rows.iter().map(|r| (r.estimator.clone(), r.snr_db)).collect();
    assert_eq!(keys[0], ("ls".to_string(), -5.0));
    assert_eq!(keys[6], ("genie".to_string(), -5.0));
    assert_eq!(keys[23], ("kmmvae".to_string(), 20.0));
    let s = snapshot_sweep(&ests, &test, 10.0, 1).unwrap();
    assert_eq!(s.rows.len(), ests.len() * 3);
    let snaps: Vec<usize> = s.rows.iter().take(3).map(|r| r.snapshot).collect();
    assert_eq!(snaps, vec![1, 2, 3]);
}

#[test]
fn sweeps_share_noise_at_equal_snr() {
    let test = gm_set(0, 50, 3);
    let a = snr_sweep(&[Estimator::Ls], &test, &[10.0], Some(2), 9).unwrap();
    let b = snapshot_sweep(&[Estimator::Ls], &test, 10.0, 9).unwrap();
    assert_eq!(a.rows[0], b.rows[1]);
    let c = snr_sweep(&[Estimator::Ls], &test, &[10.0], Some(2), 10).unwrap();
    assert_ne!(a.rows[0].nmse, c.rows[0].nmse);
}

#[test]
fn test_noise_is_independent_of_the_snr_list() {
    let test = gm_set(0, 5, 2);
    let alone = test_observations(&test, 5.0, 2);
    let r1 = snr_sweep(&[Estimator::Ls], &test, &[5.0], None, 2).unwrap();
    let r2 = snr_sweep(&[Estimator::Ls], &test, &[0.0, 5.0], None, 2).unwrap();
    assert_eq!(r1.rows[0], r2.rows[1]);
    assert_eq!(alone[0].snr_db, 5.0);
}

#[test]
fn kalman_beats_genie_memoryless_on_gauss_markov() {
    let test = gm_set(100, 2000, 4);
    let r = snapshot_sweep(&[Estimator::Kalman(gm()), Estimator::Genie(gm())], &test, 10.0, 3).unwrap();
    let k1 = r.row("kalman", 1, 10.0).unwrap().nmse;
    let g1 = r.row("genie", 1, 10.0).unwrap().nmse;
    assert!((k1 - g1).abs() < 1e-12, "at i = 1 both are the same filter");
    let k4 = r.row("kalman", 4, 10.0).unwrap().nmse;
    let g4 = r.row("genie", 4, 10.0).unwrap().nmse;
    assert!(k4 < g4, "{k4} {g4}");
}

#[test]
fn sample_cov_is_fitted_per_snapshot() {
    let train = gm_set(500, 400, 3);
    let Estimator::SampleCov(fits) = Estimator::sample_cov(&train).unwrap() else {
        panic!()
    };
    assert_eq!(fits.len(), 3);
    let test = gm_set(0, 200, 3);
    let est = vec![Estimator::SampleCov(fits), Estimator::Ls];
    let r = snapshot_sweep(&est, &test, 0.0, 1).unwrap();
    for i in 1..=3 {
        assert!(r.row("scov", i, 0.0).unwrap().nmse < r.row("ls", i, 0.0).unwrap().nmse);
    }
    assert!(matches!(Estimator::sample_cov(&train[..1]), Err(Error::InsufficientData(_))));
}

#[test]
fn sweep_validation_errors() {
    let test = gm_set(0, 10, 3);
    assert!(matches!(snr_sweep(&[], &test, &[0.0], None, 0), Err(Error::Config(_))));
    assert!(matches!(snapshot_sweep(&[], &test, 0.0, 0), Err(Error::Config(_))));
    assert!(matches!(snr_sweep(&[Estimator::Ls, Estimator::Ls], &test, &[0.0], None, 0), Err(Error::Config(_))));
    assert!(matches!(snr_sweep(&[Estimator::Ls], &test, &[0.0, 0.0], None, 0), Err(Error::Config(_))));
    assert!(matches!(snr_sweep(&[Estimator::Ls], &test, &[], None, 0), Err(Error::Config(_))));
    assert!(matches!(snr_sweep(&[Estimator::Ls], &test, &[0.0], Some(4), 0), Err(Error::Config(_))));
    assert!(matches!(snr_sweep(&[Estimator::Ls], &[], &[0.0], None, 0), Err(Error::InsufficientData(_))));
    let ts = Estimator::model(small_model(ModelKind::Tsvae));
    assert!(matches!(snapshot_sweep(&[ts.clone()], &test, 0.0, 0), Err(Error::Config(_))));
    assert!(matches!(snr_sweep(&[ts.clone()], &test, &[0.0], Some(2), 0), Err(Error::Config(_))));
    snr_sweep(&[ts], &test, &[0.0], None, 0).unwrap();
    let wrong = gm_set(0, 10, 4);
    let km = Estimator::model(small_model(ModelKind::Kmmvae));
    assert!(matches!(snr_sweep(&[km], &wrong, &[0.0], None, 0), Err(Error::Config(_))));
}

#[test]
fn csv_is_well_formed_and_deterministic() {
    let test = gm_set(0, 30, 3);
    let ests = vec![Estimator::Ls, Estimator::model(small_model(ModelKind::Vae))];
    let a = snr_sweep(&ests, &test, &[-5.0, 12.5], None, 5).unwrap().to_csv();
    let b = snr_sweep(&ests, &test, &[-5.0, 12.5], None, 5).unwrap().to_csv();
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 5);
    for line in &lines[1..] {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5);
        f[1].parse::<usize>().unwrap();
        f[2].parse::<f64>().unwrap();
        let v: f64 = f[3].parse().unwrap();
        assert!(v > 0.0);
        assert_eq!(f[4], "30");
        let digits = f[3].trim_start_matches(['0', '.']).replace('.', "");
        assert!(digits.len() <= 6, "{}", f[3]);
    }
    assert!(lines[2].starts_with("ls,3,12.5,"));
}

#[test]
fn six_significant_digits() {
    assert_eq!(format_sig6(0.1), "0.1");
    assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
    assert_eq!(format_sig6(0.000123456789), "0.000123457");
    assert_eq!(format_sig6(123456789.0), "123457000");
    assert_eq!(format_sig6(-5.0), "-5");
    assert_eq!(format_sig6(2.0 / 3.0), "0.666667");
}
