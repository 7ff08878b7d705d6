//! `kmmvae` command-line tool: dataset generation, training and NMSE sweeps.

mod config;
mod selftest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use kmmvae::chansim::{export_dataset, import_dataset, Dataset, GaussMarkovConfig, Generator, PathModelConfig};
use kmmvae::eval::{snapshot_sweep, snr_sweep, EvalReport, Estimator, DEFAULT_SNR_GRID};
use kmmvae::models::{Architecture, ModelKind};
use kmmvae::training::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, Trainer};

use config::FileConfig;

#[derive(Parser)]
#[command(name = "kmmvae", version, about = "k-memory Markov VAE channel estimation")]
struct Cli {
    /// Base seed; its meaning depends on the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file (default: $KMMVAE_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    Generate(GenerateArgs),
    /// Train a VAE, TSVAE or kMMVAE on a dataset file.
    Train(TrainArgs),
    /// NMSE over SNR at one snapshot, as CSV.
    EvalSnr(EvalArgs),
    /// NMSE over snapshots at one SNR, as CSV.
    EvalSnapshots(EvalArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `path` (geometric multipath) or `gauss-markov`.
    #[arg(long)]
    generator: Option<String>,
    /// Number of trajectories.
    #[arg(long)]
    n: Option<usize>,
    /// Antennas per snapshot (default 32).
    #[arg(long)]
    r: Option<usize>,
    /// Snapshots per trajectory (default 8).
    #[arg(long)]
    i: Option<usize>,
    /// Scale to unit mean power per entry (path model only, default true).
    #[arg(long)]
    normalize: Option<bool>,
    /// Gauss-Markov AR(1) coefficient (default 0.9).
    #[arg(long)]
    coefficient: Option<f64>,
    /// Gauss-Markov largest-to-smallest bin variance ratio (default 10).
    #[arg(long)]
    spread: Option<f64>,
    /// Time between snapshots in seconds.
    #[arg(long)]
    interval: Option<f64>,
    /// Carrier frequency in Hz.
    #[arg(long)]
    carrier: Option<f64>,
    /// Upper bound on the number of propagation paths.
    #[arg(long)]
    max_paths: Option<usize>,
    /// Probability of a line-of-sight path.
    #[arg(long)]
    los_prob: Option<f64>,
    /// Variance of the user speed in (m/s)^2.
    #[arg(long)]
    speed_variance: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// vae, tsvae or kmmvae.
    #[arg(long)]
    kind: Option<String>,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write (also written when training aborts).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Trajectories held out (from the end of the file) for the eval ELBO.
    #[arg(long)]
    eval_count: Option<usize>,
    /// kMMVAE memory k (default 1).
    #[arg(long)]
    memory: Option<usize>,
    /// Latent dimension per snapshot.
    #[arg(long)]
    latent: Option<usize>,
    /// TSVAE target snapshot (default I).
    #[arg(long)]
    target: Option<usize>,
    /// Initial learning rate (default 6e-5).
    #[arg(long)]
    lr: Option<f64>,
    /// Maximum number of epochs (default 300).
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size in trajectories (default 128).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Free-bits floor per latent dimension in nats (default 0.1).
    #[arg(long)]
    free_bits: Option<f64>,
    /// Epochs without eval ELBO improvement before a rate drop (default 25).
    #[arg(long)]
    patience: Option<usize>,
    /// Factor the rate is divided by on a drop (default 5).
    #[arg(long)]
    lr_divisor: Option<f64>,
    /// Maximum number of rate drops (default 1).
    #[arg(long)]
    max_lr_drops: Option<usize>,
    /// Lowest training SNR in dB (default -10).
    #[arg(long, allow_hyphen_values = true)]
    snr_min: Option<f64>,
    /// Highest training SNR in dB (default 25).
    #[arg(long, allow_hyphen_values = true)]
    snr_max: Option<f64>,
    /// Stop after a plateau at the final rate (default false).
    #[arg(long)]
    early_stop: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    /// Test dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training dataset for the sample-covariance estimator.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Comma-separated: ls, scov, kalman, genie, vae, tsvae, kmmvae.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// VAE checkpoint.
    #[arg(long)]
    vae: Option<PathBuf>,
    /// TSVAE checkpoint.
    #[arg(long)]
    tsvae: Option<PathBuf>,
    /// kMMVAE checkpoint.
    #[arg(long)]
    kmmvae: Option<PathBuf>,
    /// Comma-separated SNR grid in dB (eval-snr).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snrs: Option<Vec<f64>>,
    /// Evaluated snapshot (eval-snr, default I).
    #[arg(long)]
    snapshot: Option<usize>,
    /// SNR in dB (eval-snapshots, default 10).
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for numeric aborts and failed self-tests, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| {
        matches!(c.downcast_ref::<kmmvae::Error>(), Some(kmmvae::Error::NonFinite(_)))
            || c.is::<selftest::SelftestFailed>()
    });
    if numeric {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::Generate(a) => generate(a, &file, seed),
        Command::Train(a) => train(a, &file, seed),
        Command::EvalSnr(a) => eval(a, &file, seed, false),
        Command::EvalSnapshots(a) => eval(a, &file, seed, true),
        Command::Selftest => selftest::run(),
    }
}

fn required<T>(v: Option<T>, what: &str) -> anyhow::Result<T> {
    v.ok_or_else(|| anyhow!("missing {what} (flag or config)"))
}

fn generate(a: GenerateArgs, file: &FileConfig, seed: u64) -> anyhow::Result<()> {
    let c = &file.generate;
    let out = required(a.out.or(c.out.clone()), "--out")?;
    let n = required(a.n.or(c.n), "--n")?;
    let generator = a.generator.or(c.generator.clone()).unwrap_or_else(|| "path".into());
    let defaults = PathModelConfig::default();
    let r = a.r.or(c.r).unwrap_or(defaults.antennas);
    let i = a.i.or(c.i).unwrap_or(defaults.snapshots);
    let generator = match generator.as_str() {
        "path" => Generator::PathModel(PathModelConfig {
            antennas: r,
            snapshots: i,
            interval: a.interval.or(c.interval).unwrap_or(defaults.interval),
            carrier: a.carrier.or(c.carrier).unwrap_or(defaults.carrier),
            max_paths: a.max_paths.or(c.max_paths).unwrap_or(defaults.max_paths),
            los_prob: a.los_prob.or(c.los_prob).unwrap_or(defaults.los_prob),
            speed_variance: a.speed_variance.or(c.speed_variance).unwrap_or(defaults.speed_variance),
            fixed_speed: None,
        }),
        "gauss-markov" => Generator::GaussMarkov(GaussMarkovConfig::decaying(
            r,
            a.coefficient.or(c.coefficient).unwrap_or(0.9),
            a.spread.or(c.spread).unwrap_or(10.0),
        )),
        other => bail!("unknown generator `{other}` (expected path or gauss-markov)"),
    };
    let normalize = a.normalize.or(c.normalize).unwrap_or(true);
    let dataset = Dataset::generate(&generator, i, n, seed, normalize)?;
    export_dataset(&dataset, &out)?;
    eprintln!("wrote {n} trajectories (R = {r}, I = {i}) to {}", out.display());
    Ok(())
}

fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    import_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn train(a: TrainArgs, file: &FileConfig, seed: u64) -> anyhow::Result<()> {
    let c = &file.train;
    let data_path = required(a.data.or(c.data.clone()), "--data")?;
    let out = required(a.out.or(c.out.clone()), "--out")?;
    let data = load_data(&data_path)?;
    let n = data.len();
    let eval_count = a.eval_count.or(c.eval_count).unwrap_or((n / 5).clamp(1, 1000));
    if eval_count == 0 || eval_count >= n {
        bail!("eval count {eval_count} must be in 1..{n}");
    }
    let (train_set, eval_set) = data.trajectories.split_at(n - eval_count);
    let epochs = a.epochs.or(c.epochs);

    let mut trainer = match a.resume.or(c.resume.clone()) {
        Some(path) => {
            let mut ckpt = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            if let Some(e) = epochs {
                ckpt.config.max_epochs = e;
            }
            Trainer::resume(ckpt, train_set, eval_set)?
        }
        None => {
            let kind: ModelKind = required(a.kind.or(c.kind.clone()), "--kind")?.parse()?;
            let (r, i) = (data.antennas(), data.snapshots());
            let mut arch = match kind {
                ModelKind::Vae => Architecture::vae(r, i),
                ModelKind::Tsvae => Architecture::tsvae(r, i),
                ModelKind::Kmmvae => Architecture::kmmvae(r, i, 1),
            };
            if let Some(k) = a.memory.or(c.memory) {
                arch.memory = k;
            }
            if let Some(d) = a.latent.or(c.latent) {
                arch.latent = d;
            }
            if let Some(t) = a.target.or(c.target) {
                arch.target = t;
            }
            let d = TrainConfig::default();
            let cfg = TrainConfig {
                initial_lr: a.lr.or(c.lr).unwrap_or(d.initial_lr),
                plateau_patience_epochs: a.patience.or(c.patience).unwrap_or(d.plateau_patience_epochs),
                lr_divisor: a.lr_divisor.or(c.lr_divisor).unwrap_or(d.lr_divisor),
                max_lr_drops: a.max_lr_drops.or(c.max_lr_drops).unwrap_or(d.max_lr_drops),
                snr_range_db: [
                    a.snr_min.or(c.snr_min).unwrap_or(d.snr_range_db[0]),
                    a.snr_max.or(c.snr_max).unwrap_or(d.snr_range_db[1]),
                ],
                batch_size: a.batch_size.or(c.batch_size).unwrap_or(d.batch_size),
                max_epochs: epochs.unwrap_or(d.max_epochs),
                free_bits: a.free_bits.or(c.free_bits).unwrap_or(d.free_bits),
                seed,
                early_stop: a.early_stop.or(c.early_stop).unwrap_or(d.early_stop),
                adam: d.adam,
            };
            Trainer::new(arch, train_set, eval_set, cfg)?
        }
    };

    let result = trainer.run(|r| {
        eprintln!(
            "epoch {:4}  lr {:.2e}  train ELBO {:.4}  eval ELBO {:.4}{}",
            r.epoch,
            r.lr,
            r.train_elbo,
            r.eval_elbo,
            if r.improved { "  *" } else { "" }
        );
    });
    // On a numeric abort the trainer holds the last good state.
    save_checkpoint(trainer.checkpoint(), &out)?;
    result?;
    let p = &trainer.checkpoint().progress;
    eprintln!(
        "saved {} after {} epochs; best eval ELBO {:.4} at epoch {}",
        out.display(),
        p.epoch,
        p.best_eval_elbo,
        p.best_epoch
    );
    Ok(())
}

fn model_from(path: Option<PathBuf>, kind: ModelKind, meta: &mut Vec<(String, String)>) -> anyhow::Result<Estimator> {
    let flag = kind.name();
    let path = path.ok_or_else(|| anyhow!("estimator `{flag}` needs a checkpoint (--{flag})"))?;
    let ckpt: Checkpoint =
        load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ckpt.model.kind() != kind {
        bail!("{} holds a {} model, not {flag}", path.display(), ckpt.model.kind().name());
    }
    meta.push((
        format!("{flag}_checkpoint"),
        format!("{} (epoch {}, data {:016x})", path.display(), ckpt.progress.best_epoch, ckpt.data_fingerprint),
    ));
    Ok(Estimator::model(ckpt.best_model()))
}

fn eval(a: EvalArgs, file: &FileConfig, seed: u64, by_snapshot: bool) -> anyhow::Result<()> {
    let c = &file.eval;
    let names = a.estimators.or(c.estimators.clone()).unwrap_or_default();
    if names.is_empty() {
        bail!("no estimators selected (--estimators ls,scov,kalman,genie,vae,tsvae,kmmvae)");
    }
    let data_path = required(a.data.or(c.data.clone()), "--data")?;
    let test = load_data(&data_path)?;
    let mut meta = vec![("test_data".to_string(), data_path.display().to_string())];
    let mut estimators = Vec::with_capacity(names.len());
    for name in &names {
        let e = match name.trim() {
            "ls" => Estimator::Ls,
            "scov" => {
                let path = required(a.train_data.clone().or(c.train_data.clone()), "--train-data for scov")?;
                meta.push(("scov_train_data".into(), path.display().to_string()));
                Estimator::sample_cov(&load_data(&path)?.trajectories)?
            }
            "kalman" | "genie" => {
                let gm = test
                    .gauss_markov()
                    .ok_or_else(|| anyhow!("`{name}` needs a Gauss-Markov test set"))?
                    .clone();
                if name.trim() == "kalman" {
                    Estimator::Kalman(gm)
                } else {
                    Estimator::Genie(gm)
                }
            }
            "vae" => model_from(a.vae.clone().or(c.vae.clone()), ModelKind::Vae, &mut meta)?,
            "tsvae" => model_from(a.tsvae.clone().or(c.tsvae.clone()), ModelKind::Tsvae, &mut meta)?,
            "kmmvae" => model_from(a.kmmvae.clone().or(c.kmmvae.clone()), ModelKind::Kmmvae, &mut meta)?,
            other => bail!("unknown estimator `{other}`"),
        };
        estimators.push(e);
    }
    let mut report: EvalReport = if by_snapshot {
        snapshot_sweep(&estimators, &test.trajectories, a.snr.or(c.snr).unwrap_or(10.0), seed)?
    } else {
        let snrs = a.snrs.or(c.snrs.clone()).unwrap_or_else(|| DEFAULT_SNR_GRID.to_vec());
        snr_sweep(&estimators, &test.trajectories, &snrs, a.snapshot.or(c.snapshot), seed)?
    };
    report.metadata.extend(meta);
    for (k, v) in &report.metadata {
        eprintln!("{k}: {v}");
    }
    let csv = report.to_csv();
    match a.out.or(c.out.clone()) {
        Some(path) => std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}
