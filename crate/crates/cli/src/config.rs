//! Flat `key = value` run configuration with dotted section prefixes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sae_core::datasets::{ClusterConfig, Normalization, SynthHepConfig};
use sae_core::evaluation::{ClassifierConfig, EvalConfig};
use sae_core::losses::{DiversityParams, LossWeights};
use sae_core::models::Activation;
use sae_core::ot::{Epsilon, GradMode, SinkhornParams};
use sae_core::training::{AdamConfig, ArchConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Clusters,
    Hep,
    Idx,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Clusters => "clusters",
            DatasetKind::Hep => "hep",
            DatasetKind::Idx => "idx",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "clusters" => Ok(DatasetKind::Clusters),
            "hep" => Ok(DatasetKind::Hep),
            "idx" => Ok(DatasetKind::Idx),
            _ => Err(format!("expected clusters, hep or idx, got `{s}`")),
        }
    }
}

/// Decoder head; `auto` picks sigmoid for `[0, 1]` data and identity otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderHead {
    Auto,
    Fixed(Activation),
}

impl DecoderHead {
    pub fn resolve(self, normalization: Normalization) -> Activation {
        match (self, normalization) {
            (DecoderHead::Fixed(a), _) => a,
            (DecoderHead::Auto, Normalization::UnitInterval) => Activation::Sigmoid,
            (DecoderHead::Auto, Normalization::Raw) => Activation::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub dataset_kind: DatasetKind,
    pub dataset_n_examples: usize,
    pub dataset_image_side: usize,
    pub dataset_noise_level: f64,
    pub dataset_images: PathBuf,
    pub dataset_labels: PathBuf,
    pub dataset_holdout: f64,

    pub model_latent_dim: usize,
    pub model_prior_dim: usize,
    pub model_hidden: usize,
    pub model_generator_hidden: usize,
    pub model_decoder_output: DecoderHead,

    pub training_batch_size: usize,
    pub training_epochs: usize,
    pub training_log_every: usize,
    pub training_conditional: bool,
    pub training_lr: f64,
    pub training_beta1: f64,
    pub training_beta2: f64,
    pub training_adam_eps: f64,

    pub losses: LossWeights,
    pub diversity: DiversityParams,

    pub sinkhorn_epsilon: f64,
    pub sinkhorn_relative: bool,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_grad_mode: GradMode,

    pub evaluation_classifier_epochs: usize,
    pub evaluation_sinkhorn_iters: usize,

    pub interpolate_steps: usize,
    pub interpolate_rows: usize,

    pub output_dir: PathBuf,
    pub output_checkpoint: PathBuf,
    pub output_history: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let clusters = ClusterConfig::default();
        let train = TrainConfig::default();
        let sp = SinkhornParams::default();
        RunConfig {
            seed: 0,
            dataset_kind: DatasetKind::Clusters,
            dataset_n_examples: clusters.n_examples,
            dataset_image_side: clusters.image_side,
            dataset_noise_level: clusters.noise,
            dataset_images: PathBuf::new(),
            dataset_labels: PathBuf::new(),
            dataset_holdout: 0.2,
            model_latent_dim: train.arch.latent_dim,
            model_prior_dim: train.arch.prior_dim,
            model_hidden: train.arch.hidden,
            model_generator_hidden: train.arch.generator_hidden,
            model_decoder_output: DecoderHead::Auto,
            training_batch_size: train.batch_size,
            training_epochs: train.epochs,
            training_log_every: train.log_every,
            training_conditional: false,
            training_lr: train.adam.lr,
            training_beta1: train.adam.beta1,
            training_beta2: train.adam.beta2,
            training_adam_eps: train.adam.eps,
            losses: train.weights,
            diversity: train.diversity,
            sinkhorn_epsilon: match sp.epsilon {
                Epsilon::Absolute(v) | Epsilon::RelativeToMeanCost(v) => v,
            },
            sinkhorn_relative: matches!(sp.epsilon, Epsilon::RelativeToMeanCost(_)),
            sinkhorn_max_iters: sp.max_iters,
            sinkhorn_tol: sp.tol,
            sinkhorn_grad_mode: sp.grad_mode,
            evaluation_classifier_epochs: ClassifierConfig::default().epochs,
            evaluation_sinkhorn_iters: EvalConfig::default().sinkhorn.max_iters,
            interpolate_steps: 8,
            interpolate_rows: 4,
            output_dir: PathBuf::from("out"),
            output_checkpoint: PathBuf::new(),
            output_history: PathBuf::new(),
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_grad_mode(value: &str) -> Result<GradMode, String> {
    match value {
        "unrolled" => Ok(GradMode::Unrolled),
        "potentials" => Ok(GradMode::Potentials),
        _ => Err(format!("expected unrolled or potentials, got `{value}`")),
    }
}

fn grad_mode_name(mode: GradMode) -> &'static str {
    match mode {
        GradMode::Unrolled => "unrolled",
        GradMode::Potentials => "potentials",
    }
}

impl RunConfig {
    /// Every key with its current value, in schema order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Path| p.display().to_string();
        vec![
            ("seed", self.seed.to_string()),
            ("dataset.kind", self.dataset_kind.name().into()),
            ("dataset.n_examples", self.dataset_n_examples.to_string()),
            ("dataset.image_side", self.dataset_image_side.to_string()),
            ("dataset.noise_level", self.dataset_noise_level.to_string()),
            ("dataset.images", path(&self.dataset_images)),
            ("dataset.labels", path(&self.dataset_labels)),
            ("dataset.holdout", self.dataset_holdout.to_string()),
            ("model.latent_dim", self.model_latent_dim.to_string()),
            ("model.prior_dim", self.model_prior_dim.to_string()),
            ("model.hidden", self.model_hidden.to_string()),
            ("model.generator_hidden", self.model_generator_hidden.to_string()),
            (
                "model.decoder_output",
                match self.model_decoder_output {
                    DecoderHead::Auto => "auto".into(),
                    DecoderHead::Fixed(a) => a.name().into(),
                },
            ),
            ("training.batch_size", self.training_batch_size.to_string()),
            ("training.epochs", self.training_epochs.to_string()),
            ("training.log_every", self.training_log_every.to_string()),
            ("training.conditional", self.training_conditional.to_string()),
            ("training.lr", self.training_lr.to_string()),
            ("training.beta1", self.training_beta1.to_string()),
            ("training.beta2", self.training_beta2.to_string()),
            ("training.adam_eps", self.training_adam_eps.to_string()),
            ("losses.alpha_recon", self.losses.alpha_recon.to_string()),
            ("losses.beta", self.losses.beta.to_string()),
            ("losses.delta", self.losses.delta.to_string()),
            ("losses.gamma", self.losses.gamma.to_string()),
            ("losses.alpha_lap", self.losses.alpha_lap.to_string()),
            ("losses.pyramid_levels", self.losses.pyramid_levels.to_string()),
            ("losses.cond_scale", self.losses.cond_scale.to_string()),
            ("losses.diversity_p", self.diversity.p.to_string()),
            ("losses.diversity_tau", self.diversity.tau.to_string()),
            ("sinkhorn.epsilon", self.sinkhorn_epsilon.to_string()),
            ("sinkhorn.relative", self.sinkhorn_relative.to_string()),
            ("sinkhorn.max_iters", self.sinkhorn_max_iters.to_string()),
            ("sinkhorn.tol", self.sinkhorn_tol.to_string()),
            ("sinkhorn.grad_mode", grad_mode_name(self.sinkhorn_grad_mode).into()),
            ("evaluation.classifier_epochs", self.evaluation_classifier_epochs.to_string()),
            ("evaluation.sinkhorn_iters", self.evaluation_sinkhorn_iters.to_string()),
            ("interpolate.steps", self.interpolate_steps.to_string()),
            ("interpolate.rows", self.interpolate_rows.to_string()),
            ("output.dir", path(&self.output_dir)),
            ("output.checkpoint", path(&self.output_checkpoint)),
            ("output.history", path(&self.output_history)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "dataset.kind" => self.dataset_kind = parse(key, v)?,
            "dataset.n_examples" => self.dataset_n_examples = parse(key, v)?,
            "dataset.image_side" => self.dataset_image_side = parse(key, v)?,
            "dataset.noise_level" => self.dataset_noise_level = parse(key, v)?,
            "dataset.images" => self.dataset_images = PathBuf::from(v),
            "dataset.labels" => self.dataset_labels = PathBuf::from(v),
            "dataset.holdout" => self.dataset_holdout = parse(key, v)?,
            "model.latent_dim" => self.model_latent_dim = parse(key, v)?,
            "model.prior_dim" => self.model_prior_dim = parse(key, v)?,
            "model.hidden" => self.model_hidden = parse(key, v)?,
            "model.generator_hidden" => self.model_generator_hidden = parse(key, v)?,
            "model.decoder_output" => {
                self.model_decoder_output = if v == "auto" {
                    DecoderHead::Auto
                } else {
                    DecoderHead::Fixed(Activation::parse(v).map_err(|e| ConfigError(format!("{key}: {e}")))?)
                }
            }
            "training.batch_size" => self.training_batch_size = parse(key, v)?,
            "training.epochs" => self.training_epochs = parse(key, v)?,
            "training.log_every" => self.training_log_every = parse(key, v)?,
            "training.conditional" => self.training_conditional = parse(key, v)?,
            "training.lr" => self.training_lr = parse(key, v)?,
            "training.beta1" => self.training_beta1 = parse(key, v)?,
            "training.beta2" => self.training_beta2 = parse(key, v)?,
            "training.adam_eps" => self.training_adam_eps = parse(key, v)?,
            "losses.alpha_recon" => self.losses.alpha_recon = parse(key, v)?,
            "losses.beta" => self.losses.beta = parse(key, v)?,
            "losses.delta" => self.losses.delta = parse(key, v)?,
            "losses.gamma" => self.losses.gamma = parse(key, v)?,
            "losses.alpha_lap" => self.losses.alpha_lap = parse(key, v)?,
            "losses.pyramid_levels" => self.losses.pyramid_levels = parse(key, v)?,
            "losses.cond_scale" => self.losses.cond_scale = parse(key, v)?,
            "losses.diversity_p" => self.diversity.p = parse(key, v)?,
            "losses.diversity_tau" => self.diversity.tau = parse(key, v)?,
            "sinkhorn.epsilon" => self.sinkhorn_epsilon = parse(key, v)?,
            "sinkhorn.relative" => self.sinkhorn_relative = parse(key, v)?,
            "sinkhorn.max_iters" => self.sinkhorn_max_iters = parse(key, v)?,
            "sinkhorn.tol" => self.sinkhorn_tol = parse(key, v)?,
            "sinkhorn.grad_mode" => {
                self.sinkhorn_grad_mode = parse_grad_mode(v).map_err(|e| ConfigError(format!("{key}: {e}")))?
            }
            "evaluation.classifier_epochs" => self.evaluation_classifier_epochs = parse(key, v)?,
            "evaluation.sinkhorn_iters" => self.evaluation_sinkhorn_iters = parse(key, v)?,
            "interpolate.steps" => self.interpolate_steps = parse(key, v)?,
            "interpolate.rows" => self.interpolate_rows = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.checkpoint" => self.output_checkpoint = PathBuf::from(v),
            "output.history" => self.output_history = PathBuf::from(v),
            _ => return Err(ConfigError(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| ConfigError(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError(msg.into()));
        if !(0.0..1.0).contains(&self.dataset_holdout) || self.dataset_holdout == 0.0 {
            return bad("dataset.holdout must lie in (0, 1)");
        }
        if self.dataset_kind == DatasetKind::Idx && self.dataset_images.as_os_str().is_empty() {
            return bad("dataset.images is required when dataset.kind = idx");
        }
        if self.interpolate_steps < 2 || self.interpolate_rows == 0 {
            return bad("interpolate.steps must be ≥ 2 and interpolate.rows ≥ 1");
        }
        if self.evaluation_classifier_epochs == 0 || self.evaluation_sinkhorn_iters == 0 {
            return bad("evaluation.classifier_epochs and evaluation.sinkhorn_iters must be ≥ 1");
        }
        if !(self.sinkhorn_epsilon > 0.0) {
            return bad("sinkhorn.epsilon must be positive");
        }
        self.train_config(Normalization::UnitInterval)
            .validate()
            .map_err(|e| ConfigError(e.to_string()))
    }

    /// `output.checkpoint`, or `model.ck` inside `output.dir` when empty.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.in_output(&self.output_checkpoint, "model.ck")
    }

    /// `output.history`, or `history.csv` inside `output.dir` when empty.
    pub fn history_path(&self) -> PathBuf {
        self.in_output(&self.output_history, "history.csv")
    }

    pub fn in_output(&self, set: &Path, name: &str) -> PathBuf {
        if set.as_os_str().is_empty() {
            self.output_dir.join(name)
        } else {
            set.to_path_buf()
        }
    }

    pub fn sinkhorn(&self) -> SinkhornParams {
        SinkhornParams {
            epsilon: if self.sinkhorn_relative {
                Epsilon::RelativeToMeanCost(self.sinkhorn_epsilon)
            } else {
                Epsilon::Absolute(self.sinkhorn_epsilon)
            },
            max_iters: self.sinkhorn_max_iters,
            tol: self.sinkhorn_tol,
            grad_mode: self.sinkhorn_grad_mode,
        }
    }

    pub fn train_config(&self, normalization: Normalization) -> TrainConfig {
        TrainConfig {
            batch_size: self.training_batch_size,
            epochs: self.training_epochs,
            seed: self.seed,
            weights: self.losses,
            diversity: self.diversity,
            sinkhorn: self.sinkhorn(),
            arch: ArchConfig {
                latent_dim: self.model_latent_dim,
                prior_dim: self.model_prior_dim,
                hidden: self.model_hidden,
                generator_hidden: self.model_generator_hidden,
                decoder_output: self.model_decoder_output.resolve(normalization),
            },
            adam: AdamConfig {
                lr: self.training_lr,
                beta1: self.training_beta1,
                beta2: self.training_beta2,
                eps: self.training_adam_eps,
            },
            conditional: self.training_conditional,
            checkpoint_path: Some(self.checkpoint_path()),
            history_path: Some(self.history_path()),
            log_every: self.training_log_every,
            resume_from: None,
        }
    }

    pub fn synth_hep(&self) -> SynthHepConfig {
        SynthHepConfig {
            n_examples: self.dataset_n_examples,
            image_side: self.dataset_image_side,
            seed: self.seed,
            noise_level: self.dataset_noise_level,
            ..SynthHepConfig::default()
        }
    }

    pub fn clusters(&self) -> ClusterConfig {
        ClusterConfig {
            n_examples: self.dataset_n_examples,
            image_side: self.dataset_image_side,
            noise: self.dataset_noise_level,
            seed: self.seed,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.evaluation_classifier_epochs,
            seed: self.seed,
            ..ClassifierConfig::default()
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            seed: self.seed,
            sinkhorn: self
                .sinkhorn()
                .with_iters(self.evaluation_sinkhorn_iters, EvalConfig::default().sinkhorn.tol),
        }
    }
}
