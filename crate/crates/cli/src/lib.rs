//! `sae` command-line driver.

pub mod config;
pub mod grid;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sae_core::datasets::{export_dataset, gaussian_clusters, load_idx, parse_attributes_csv, synth_hep, Dataset};
use sae_core::evaluation::{evaluate, FeatureExtractor};
use sae_core::models::{sample_prior, ModelBundle};
use sae_core::training::{train, Checkpoint};
use sae_core::{derive_seed, Error, Tensor};

use config::{DatasetKind, RunConfig};

/// Sinkhorn autoencoder with a learned noise generator.
#[derive(Debug, Parser)]
#[command(name = "sae", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,

    /// Number of samples to generate.
    #[arg(long, global = true, value_name = "N")]
    pub n: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_name = "BOOL")]
    pub conditional: Option<bool>,

    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Override a configuration key, e.g. `--set losses.beta=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Attributes CSV with one condition row per generated sample.
    #[arg(long, global = true, value_name = "PATH")]
    pub attributes: Option<PathBuf>,

    /// Continue training from this checkpoint.
    #[arg(long, global = true, value_name = "PATH")]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint and the loss history.
    Train,
    /// Sample images from a checkpoint.
    Generate,
    /// Score a checkpoint against the held-out split.
    Evaluate,
    /// Latent interpolation sheets between prior draws.
    Interpolate,
    /// Write the synthetic calorimeter dataset to disk.
    SynthData,
    /// Run the built-in oracle suites.
    Selftest,
}

/// Process exit status plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. }
            | Error::Shape { .. }
            | Error::DimensionMismatch(..)
            | Error::NonScalarLoss(_)
            | Error::StaleHandle { .. }
            | Error::UnknownOp(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::usage(format!("config: {e}"))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(ck) = &cli.checkpoint {
        cfg.output_checkpoint = ck.clone();
    }
    if let Some(c) = cli.conditional {
        cfg.training_conditional = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let ds = match cfg.dataset_kind {
        DatasetKind::Clusters => gaussian_clusters(&cfg.clusters())?,
        DatasetKind::Hep => synth_hep(&cfg.synth_hep())?,
        DatasetKind::Idx => {
            let labels = (!cfg.dataset_labels.as_os_str().is_empty()).then_some(cfg.dataset_labels.as_path());
            load_idx(&cfg.dataset_images, labels)?
        }
    };
    Ok(ds)
}

/// `(train, holdout)` split shared by every subcommand.
fn split(cfg: &RunConfig) -> Result<(Dataset, Dataset), Failure> {
    Ok(load_dataset(cfg)?.split(cfg.dataset_holdout, cfg.seed)?)
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn load_bundle(cfg: &RunConfig) -> Result<ModelBundle, Failure> {
    Ok(Checkpoint::load(&cfg.checkpoint_path())?.bundle)
}

fn cmd_train(cli: &Cli, cfg: &RunConfig) -> Result<(), Failure> {
    let (train_set, _) = split(cfg)?;
    let mut tc = cfg.train_config(train_set.normalization);
    tc.resume_from = cli.resume.clone();
    for p in [&cfg.checkpoint_path(), &cfg.history_path()] {
        create_parent(p)?;
    }
    create_dir(&cfg.output_dir)?;
    write(&cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let out = train(&tc, &train_set)?;
    println!(
        "trained {} epochs ({} steps) on {} examples",
        out.trainer.epochs_completed,
        out.trainer.global_step,
        train_set.len()
    );
    if let Some(last) = out.history.last() {
        let l = &last.loss;
        println!(
            "final step {}: total {:.6} recon {:.6} sinkhorn {:.6} diversity {:.6} weight_reg {:.6}",
            last.step, l.total, l.recon, l.sinkhorn, l.diversity, l.weight_reg
        );
    }
    println!("checkpoint {}", cfg.checkpoint_path().display());
    println!("history {}", cfg.history_path().display());
    Ok(())
}

fn write_sheet(dir: &Path, name: &str, images: &Tensor, bundle: &ModelBundle, rows: usize, cols: usize) -> Result<(), Failure> {
    create_dir(dir)?;
    let pgm = dir.join(format!("{name}.pgm"));
    grid::render_image_grid(images, bundle.image, rows, cols, &pgm).map_err(|e| io_failure(&pgm, e))?;
    let csv = dir.join(format!("{name}.csv"));
    write(&csv, grid::values_csv(images))?;
    println!("wrote {} and {}", pgm.display(), csv.display());
    Ok(())
}

/// Condition rows for `n` samples: the attributes file when given, else the
/// held-out split.
fn sample_conditions(cli: &Cli, cfg: &RunConfig, bundle: &ModelBundle) -> Result<(usize, Option<Tensor>), Failure> {
    let n = cli.n;
    if !bundle.is_conditional() {
        if cli.attributes.is_some() {
            return Err(Failure::usage("--attributes given but the checkpoint is unconditional"));
        }
        return Ok((n.unwrap_or(16), None));
    }
    let q = match &cli.attributes {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            parse_attributes_csv(&text)?.1
        }
        None => split(cfg)?
            .1
            .conditions
            .ok_or_else(|| Failure::usage("dataset has no conditions for a conditional checkpoint"))?,
    };
    if q.cols() != bundle.condition_dim {
        return Err(Failure::usage(format!(
            "conditions have {} columns, the checkpoint expects {}",
            q.cols(),
            bundle.condition_dim
        )));
    }
    let n = n.unwrap_or(if cli.attributes.is_some() { q.rows() } else { 16 });
    if n == 0 || n > q.rows() {
        return Err(Failure::usage(format!("--n {n} but only {} condition rows", q.rows())));
    }
    let rows: Vec<usize> = (0..n).collect();
    Ok((n, Some(q.select_rows(&rows))))
}

fn cmd_generate(cli: &Cli, cfg: &RunConfig) -> Result<(), Failure> {
    let bundle = load_bundle(cfg)?;
    let (n, q) = sample_conditions(cli, cfg, &bundle)?;
    if n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let images = bundle.sample_images(n, q.as_ref(), cfg.seed)?;
    let (rows, cols) = grid::grid_dims(n);
    write_sheet(&cfg.output_dir, "samples", &images, &bundle, rows, cols)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<(), Failure> {
    let bundle = load_bundle(cfg)?;
    let (train_set, holdout) = split(cfg)?;
    if holdout.shape != bundle.image {
        return Err(Failure::usage(format!(
            "dataset images are {}×{}, the checkpoint expects {}×{}",
            holdout.shape.height, holdout.shape.width, bundle.image.height, bundle.image.width
        )));
    }
    let extractor = FeatureExtractor::train(&train_set, &cfg.classifier())?;
    let (report, dump) = evaluate(&bundle, &holdout, &extractor, &cfg.eval())?;
    create_dir(&cfg.output_dir)?;
    let csv = report.to_csv();
    write(&cfg.output_dir.join("eval.csv"), &csv)?;
    write(&cfg.output_dir.join("features.csv"), dump)?;
    print!("{csv}");
    Ok(())
}

fn cmd_interpolate(cfg: &RunConfig) -> Result<(), Failure> {
    let bundle = load_bundle(cfg)?;
    let (rows, steps) = (cfg.interpolate_rows, cfg.interpolate_steps);
    let q = if bundle.is_conditional() {
        let q = split(cfg)?
            .1
            .conditions
            .ok_or_else(|| Failure::usage("dataset has no conditions for a conditional checkpoint"))?;
        if q.rows() < 2 * rows {
            return Err(Failure::usage(format!("{rows} rows need {} held-out examples", 2 * rows)));
        }
        Some(q)
    } else {
        None
    };
    let mut sheet = Vec::with_capacity(rows * steps * bundle.image.pixels());
    for r in 0..rows {
        let u0 = sample_prior(1, bundle.prior_dim, derive_seed(cfg.seed, 2 * r as u64))?;
        let u1 = sample_prior(1, bundle.prior_dim, derive_seed(cfg.seed, 2 * r as u64 + 1))?;
        let ends = q.as_ref().map(|q| (q.select_rows(&[2 * r]), q.select_rows(&[2 * r + 1])));
        let codes = bundle.interpolate_codes(
            &u0,
            &u1,
            ends.as_ref().map(|e| &e.0),
            ends.as_ref().map(|e| &e.1),
            steps,
        )?;
        for c in &codes {
            sheet.extend_from_slice(bundle.decode_values(c)?.data());
        }
    }
    let images = Tensor::matrix(rows * steps, bundle.image.pixels(), sheet)?;
    write_sheet(&cfg.output_dir, "interpolation", &images, &bundle, rows, steps)
}

fn cmd_synth_data(cfg: &RunConfig) -> Result<(), Failure> {
    let ds = synth_hep(&cfg.synth_hep())?;
    create_dir(&cfg.output_dir)?;
    export_dataset(&ds, &cfg.output_dir)?;
    println!(
        "wrote {} examples of {}×{} to {}",
        ds.len(),
        ds.shape.height,
        ds.shape.width,
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_selftest() -> Result<(), Failure> {
    let results = sae_core::selftest::run_all();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: 1,
            message: format!("{failed} of {} suites failed", results.len()),
        });
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve_config(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match cli.command {
        Command::Train => cmd_train(cli, &cfg),
        Command::Generate => cmd_generate(cli, &cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Interpolate => cmd_interpolate(&cfg),
        Command::SynthData => cmd_synth_data(&cfg),
        Command::Selftest => cmd_selftest(),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return u8::try_from(code).unwrap_or(2);
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
