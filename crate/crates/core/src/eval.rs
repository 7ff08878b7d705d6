//! NMSE metric, SNR and snapshot sweeps, and CSV reports.

use std::collections::HashSet;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::chansim::{add_noise_with, idft, squared_norm, GaussMarkovConfig, ObservationSequence, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_sample_cov, genie_memoryless, kalman_oracle, ls_estimate, model_estimates, scov_lmmse_estimate,
    SampleCovModel,
};
use crate::models::{Model, ModelKind};
use crate::seed::{derive_seed, stream_rng, Stream};

/// Trajectories per model forward pass during evaluation.
const CHUNK: usize = 256;

/// Per-sample `||h - h_hat||^2 / ||h||^2`.
pub fn nmse_samples(estimates: &[Vec<Complex64>], truths: &[&[Complex64]]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return Err(Error::Contract(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    estimates
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(n, (e, h))| {
            if e.len() != h.len() {
                return Err(Error::Contract(format!("sample {n}: dimension {} != {}", e.len(), h.len())));
            }
            let power = squared_norm(h);
            if !(power > 0.0) {
                return Err(Error::Degenerate(format!("sample {n} has a zero-norm true channel")));
            }
            let err: f64 = e.iter().zip(h.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            Ok(err / power)
        })
        .collect()
}

/// Mean normalized squared error over samples.
pub fn nmse(estimates: &[Vec<Complex64>], truths: &[&[Complex64]]) -> Result<f64> {
    let s = nmse_samples(estimates, truths)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone)]
pub enum Estimator {
    Ls,
    /// One sample-covariance fit per snapshot, index 0 for snapshot 1.
    SampleCov(Vec<SampleCovModel>),
    Kalman(GaussMarkovConfig),
    Genie(GaussMarkovConfig),
    Model(Box<Model>),
}

impl Estimator {
    /// Fits the sample-covariance estimator on clean training channels.
    pub fn sample_cov(train: &[Trajectory]) -> Result<Self> {
        let snapshots = train.first().map_or(0, Trajectory::snapshots);
        let fits = (0..snapshots)
            .map(|i| {
                let hs: Vec<&[Complex64]> = train.iter().map(|t| t.channel(i)).collect();
                fit_sample_cov(&hs)
            })
            .collect::<Result<Vec<_>>>()?;
        if fits.is_empty() {
            return Err(Error::InsufficientData("sample covariance needs training data".into()));
        }
        Ok(Estimator::SampleCov(fits))
    }

    pub fn model(model: Model) -> Self {
        Estimator::Model(Box::new(model))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ls => "ls",
            Estimator::SampleCov(_) => "scov",
            Estimator::Kalman(_) => "kalman",
            Estimator::Genie(_) => "genie",
            Estimator::Model(m) => m.kind().name(),
        }
    }

    /// Antenna-domain estimates of snapshot `snapshot` (1-based).
    pub fn estimate(&self, observations: &[&ObservationSequence], snapshot: usize) -> Result<Vec<Vec<Complex64>>> {
        match self {
            Estimator::Ls => observations.iter().map(|o| ls_estimate(o, snapshot)).collect(),
            Estimator::SampleCov(fits) => {
                let fit = fits
                    .get(snapshot.wrapping_sub(1))
                    .ok_or_else(|| Error::Config(format!("no sample-covariance fit for snapshot {snapshot}")))?;
                observations
                    .iter()
                    .map(|o| {
                        let y = idft(&ls_input(o, snapshot)?);
                        Ok(scov_lmmse_estimate(fit, &y, o.noise_var)?.channel)
                    })
                    .collect()
            }
            Estimator::Kalman(cfg) => observations
                .iter()
                .map(|o| kalman_oracle(cfg, &o.observations, o.noise_var, snapshot))
                .collect(),
            Estimator::Genie(cfg) => observations
                .iter()
                .map(|o| Ok(genie_memoryless(cfg, &ls_input(o, snapshot)?, o.noise_var)))
                .collect(),
            Estimator::Model(m) => {
                let mut out = Vec::with_capacity(observations.len());
                for chunk in observations.chunks(CHUNK) {
                    out.extend(model_estimates(m, chunk, snapshot)?);
                }
                Ok(out)
            }
        }
    }
}

fn ls_input(o: &ObservationSequence, snapshot: usize) -> Result<Vec<Complex64>> {
    o.observations
        .get(snapshot.wrapping_sub(1))
        .cloned()
        .ok_or_else(|| Error::Config(format!("snapshot {snapshot} outside 1..={}", o.snapshots())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub estimator: String,
    pub snapshot: usize,
    pub snr_db: f64,
    pub nmse: f64,
    pub n_t: usize,
    /// Standard error of the mean NMSE; not part of the CSV.
    pub std_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// Free-form provenance such as dataset seed and checkpoint ids.
    pub metadata: Vec<(String, String)>,
}

pub const CSV_HEADER: &str = "estimator,snapshot,snr_db,nmse,n_t";

/// Six significant digits in plain decimal notation.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("float formatting round-trips");
    format!("{rounded}")
}

impl EvalReport {
    pub fn row(&self, estimator: &str, snapshot: usize, snr_db: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.snapshot == snapshot && r.snr_db == snr_db)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.estimator,
                r.snapshot,
                format_sig6(r.snr_db),
                format_sig6(r.nmse),
                r.n_t
            );
        }
        out
    }
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Observations of every test trajectory at one SNR. Noise depends only on
/// `(seed, trajectory index, snr_db)`, so both sweeps see the same draws
/// at equal SNR.
pub fn test_observations(test: &[Trajectory], snr_db: f64, seed: u64) -> Vec<ObservationSequence> {
    test.iter()
        .enumerate()
        .map(|(n, t)| {
            let base = derive_seed(seed, Stream::TestNoise, n as u64);
            add_noise_with(t, snr_db, &mut stream_rng(base, Stream::TestNoise, snr_db.to_bits()))
        })
        .collect()
}

fn check_inputs(estimators: &[Estimator], test: &[Trajectory]) -> Result<()> {
    if estimators.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    let mut seen = HashSet::new();
    for e in estimators {
        if !seen.insert(e.name()) {
            return Err(Error::Config(format!("estimator `{}` listed twice", e.name())));
        }
    }
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let (i, r) = (test[0].snapshots(), test[0].antennas());
    if test.iter().any(|t| t.snapshots() != i || t.antennas() != r) {
        return Err(Error::Config("test trajectories differ in shape".into()));
    }
    for e in estimators {
        match e {
            Estimator::Model(m) => {
                let a = m.architecture();
                if a.snapshots != i || a.antennas != r {
                    return Err(Error::Config(format!(
                        "{} model expects I = {}, R = {}; test set has I = {i}, R = {r}",
                        m.kind().name(),
                        a.snapshots,
                        a.antennas
                    )));
                }
            }
            Estimator::Kalman(c) | Estimator::Genie(c) if c.antennas() != r => {
                return Err(Error::Config(format!("{} config has R = {}, test set R = {r}", e.name(), c.antennas())));
            }
            Estimator::SampleCov(f) if f.len() != i || f[0].mean.len() != r => {
                return Err(Error::Config("sample-covariance fit does not match the test set".into()));
            }
            _ => {}
        }
    }
    Ok(())
}

fn evaluate(
    e: &Estimator,
    test: &[Trajectory],
    obs: &[ObservationSequence],
    snapshot: usize,
    snr_db: f64,
) -> Result<ReportRow> {
    let refs: Vec<&ObservationSequence> = obs.iter().collect();
    let estimates = e.estimate(&refs, snapshot)?;
    let truths: Vec<&[Complex64]> = test.iter().map(|t| t.channel(snapshot - 1)).collect();
    let samples = nmse_samples(&estimates, &truths)?;
    let (nmse, std_err) = mean_and_stderr(&samples);
    if !nmse.is_finite() {
        return Err(Error::NonFinite(format!("{} NMSE at {snr_db} dB is {nmse}", e.name())));
    }
    Ok(ReportRow {
        estimator: e.name().to_string(),
        snapshot,
        snr_db,
        nmse,
        n_t: samples.len(),
        std_err,
    })
}

/// NMSE at snapshot `snapshot` (default `I`) for every estimator and SNR.
/// Rows are ordered by estimator, then SNR, as given.
pub fn snr_sweep(
    estimators: &[Estimator],
    test: &[Trajectory],
    snrs_db: &[f64],
    snapshot: Option<usize>,
    seed: u64,
) -> Result<EvalReport> {
    check_inputs(estimators, test)?;
    let i = test[0].snapshots();
    let snapshot = snapshot.unwrap_or(i);
    if !(1..=i).contains(&snapshot) {
        return Err(Error::Config(format!("snapshot {snapshot} outside 1..={i}")));
    }
    if snrs_db.is_empty() {
        return Err(Error::Config("empty SNR list".into()));
    }
    let mut seen = HashSet::new();
    if snrs_db.iter().any(|s| !s.is_finite() || !seen.insert(s.to_bits())) {
        return Err(Error::Config("SNR list must hold distinct finite values".into()));
    }
    for e in estimators {
        if let Estimator::Model(m) = e {
            if m.kind() == ModelKind::Tsvae && m.architecture().target != snapshot {
                return Err(Error::Config(format!(
                    "TSVAE targets snapshot {}, sweep evaluates {snapshot}",
                    m.architecture().target
                )));
            }
        }
    }
    let observations: Vec<Vec<ObservationSequence>> =
        snrs_db.iter().map(|&s| test_observations(test, s, seed)).collect();
    let mut rows = Vec::with_capacity(estimators.len() * snrs_db.len());
    for e in estimators {
        for (&snr, obs) in snrs_db.iter().zip(&observations) {
            rows.push(evaluate(e, test, obs, snapshot, snr)?);
        }
    }
    Ok(EvalReport {
        rows,
        metadata: vec![("noise_seed".into(), seed.to_string())],
    })
}

/// NMSE at every snapshot `1..=I` for one SNR. The TSVAE has no
/// snapshot-wise estimate and is rejected.
pub fn snapshot_sweep(estimators: &[Estimator], test: &[Trajectory], snr_db: f64, seed: u64) -> Result<EvalReport> {
    check_inputs(estimators, test)?;
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR {snr_db} dB must be finite")));
    }
    if estimators
        .iter()
        .any(|e| matches!(e, Estimator::Model(m) if m.kind() == ModelKind::Tsvae))
    {
        return Err(Error::Config("the TSVAE only estimates its target snapshot".into()));
    }
    let obs = test_observations(test, snr_db, seed);
    let i = test[0].snapshots();
    let mut rows = Vec::with_capacity(estimators.len() * i);
    for e in estimators {
        for snapshot in 1..=i {
            rows.push(evaluate(e, test, &obs, snapshot, snr_db)?);
        }
    }
    Ok(EvalReport {
        rows,
        metadata: vec![("noise_seed".into(), seed.to_string())],
    })
}

/// Default SNR grid in dB.
pub const DEFAULT_SNR_GRID: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
