//! Joint optimization of encoder, decoder and noise generator.
//!
//! Each step records one tape and differentiates the joint objective once.
//! The decoder only sees reconstruction, the noise generator only sees the
//! Sinkhorn term, the encoder sees every term. Networks whose only loss term
//! has weight zero are placed on the tape as constants and skipped by the
//! optimizer, so their parameters stay bitwise unchanged.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::autodiff::{GradMap, Tape, Var};
use crate::datasets::Dataset;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::losses::{joint_loss, DiversityParams, JointInputs, LossBreakdown, LossWeights, SinkhornStats};
use crate::models::{
    sample_prior, Activation, BoundNetwork, BundleConfig, Layer, MlpArch, ModelBundle, ModelParams, Network,
};
use crate::ot::SinkhornParams;
use crate::tensor::{ImageShape, Tensor};

const PRIOR_STREAM: u64 = 0x5052_494F_52;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Moments for one network, aligned with [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Bias-corrected Adam update. `grads[k]` pairs with the k-th parameter
    /// tensor; `None` leaves that tensor and its moments untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<&Tensor>]) -> Result<()> {
        if grads.len() != params.num_tensors() || self.m.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameter tensors",
                grads.len(),
                params.num_tensors()
            )));
        }
        for (p, g) in params.tensors().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::Shape {
                        op: "adam",
                        lhs: p.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, p) in params.tensors_mut().enumerate() {
            let Some(g) = grads[k] else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *pi -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Update from the gradients a backward pass produced for `bound`.
    pub fn step_from(&mut self, params: &mut ModelParams, bound: &BoundNetwork, grads: &GradMap) -> Result<()> {
        let g: Vec<Option<&Tensor>> = bound.vars.iter().map(|&v| grads.get(v)).collect();
        self.step(params, &g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub encoder: AdamState,
    pub decoder: AdamState,
    pub noise_generator: AdamState,
}

impl Optimizers {
    pub fn new(config: AdamConfig, bundle: &ModelBundle) -> Self {
        Optimizers {
            encoder: AdamState::new(config, &bundle.encoder.params),
            decoder: AdamState::new(config, &bundle.decoder.params),
            noise_generator: AdamState::new(config, &bundle.noise_generator.params),
        }
    }
}

/// Widths of the three networks; image and condition sizes come from data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub prior_dim: usize,
    pub hidden: usize,
    pub generator_hidden: usize,
    pub decoder_output: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let b = BundleConfig::new(ImageShape::square(1));
        ArchConfig {
            latent_dim: b.latent_dim,
            prior_dim: b.prior_dim,
            hidden: b.hidden,
            generator_hidden: b.generator_hidden,
            decoder_output: b.decoder_output,
        }
    }
}

impl ArchConfig {
    pub fn bundle_config(&self, image: ImageShape, condition_dim: usize) -> BundleConfig {
        BundleConfig {
            image,
            latent_dim: self.latent_dim,
            prior_dim: self.prior_dim,
            condition_dim,
            hidden: self.hidden,
            generator_hidden: self.generator_hidden,
            decoder_output: self.decoder_output,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub diversity: DiversityParams,
    pub sinkhorn: SinkhornParams,
    pub arch: ArchConfig,
    pub adam: AdamConfig,
    pub conditional: bool,
    pub checkpoint_path: Option<PathBuf>,
    pub history_path: Option<PathBuf>,
    /// Record every `log_every`-th step (1-based).
    pub log_every: usize,
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 10,
            seed: 0,
            weights: LossWeights::default(),
            diversity: DiversityParams::default(),
            sinkhorn: SinkhornParams::default(),
            arch: ArchConfig::default(),
            adam: AdamConfig::default(),
            conditional: false,
            checkpoint_path: None,
            history_path: None,
            log_every: 1,
            resume_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be at least 1"));
        }
        self.weights.validate()?;
        self.diversity.validate()?;
        self.sinkhorn.validate()?;
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    /// 1-based global step.
    pub step: u64,
    pub loss: LossBreakdown,
    pub sinkhorn_iters: usize,
    pub marginal_violation: f64,
}

pub const HISTORY_HEADER: &str = "step,total,recon,sinkhorn,diversity,weight_reg,sinkhorn_iters,marginal_violation";

impl HistoryRow {
    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, l.total, l.recon, l.sinkhorn, l.diversity, l.weight_reg, self.sinkhorn_iters, self.marginal_violation
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn first(&self) -> Option<&HistoryRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub sinkhorn: SinkhornStats,
}

/// The three networks' parameters on one tape.
#[derive(Clone, Debug)]
pub struct BoundBundle {
    pub encoder: BoundNetwork,
    pub decoder: BoundNetwork,
    pub noise_generator: BoundNetwork,
}

impl BoundBundle {
    /// Binds every parameter as a constant.
    pub fn constants(tape: &mut Tape, b: &ModelBundle) -> Self {
        BoundBundle {
            encoder: b.encoder.bind(tape, false),
            decoder: b.decoder.bind(tape, false),
            noise_generator: b.noise_generator.bind(tape, false),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    pub loss: LossBreakdown,
    pub sinkhorn: SinkhornStats,
}

/// Forward pass of the joint objective on batch `x` with prior noise `u`.
/// Non-finite codes give [`Error::NonFinite`] with step 0.
pub fn objective(
    tape: &mut Tape,
    b: &ModelBundle,
    bound: &BoundBundle,
    x: &Tensor,
    q: Option<&Tensor>,
    u: &Tensor,
    cfg: &TrainConfig,
) -> Result<Objective> {
    if b.is_conditional() != q.is_some() {
        return Err(Error::invalid("conditions must be given exactly for a conditional bundle"));
    }
    let xv = tape.constant(x.clone());
    let e = b.encode(tape, &bound.encoder, xv)?;
    let x_rec = b.decode(tape, &bound.decoder, e)?;
    let uv = tape.constant(u.clone());
    let qv = q.map(|q| tape.constant(q.clone()));
    let e_gen = b.generate_codes(tape, &bound.noise_generator, uv, qv)?;
    if !tape.value(e).all_finite() || !tape.value(e_gen).all_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let inputs = JointInputs {
        x: xv,
        x_rec,
        e,
        e_gen,
        encoder_last_weight: bound.encoder.last_weight(),
        conditions: q.map(|q| (q, q)),
        image: b.image,
    };
    let (total, loss, sinkhorn) = joint_loss(tape, &inputs, &cfg.weights, &cfg.diversity, &cfg.sinkhorn)?;
    Ok(Objective { total, loss, sinkhorn })
}

/// Model, optimizer state and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub optimizers: Optimizers,
    pub epochs_completed: u64,
    pub global_step: u64,
}

impl Trainer {
    /// Fresh bundle sized for `data`, seeded from `cfg.seed`.
    pub fn new(cfg: &TrainConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let cond = if cfg.conditional {
            let k = data.condition_dim();
            if k == 0 {
                return Err(Error::invalid("conditional training needs a dataset with conditions"));
            }
            k
        } else {
            0
        };
        let bundle = ModelBundle::new(&cfg.arch.bundle_config(data.shape, cond), cfg.seed)?;
        Ok(Trainer {
            optimizers: Optimizers::new(cfg.adam, &bundle),
            bundle,
            epochs_completed: 0,
            global_step: 0,
        })
    }

    /// Prior noise used at the current step.
    pub fn step_noise(&self, n: usize, cfg: &TrainConfig) -> Result<Tensor> {
        sample_prior(n, self.bundle.prior_dim, derive_seed(derive_seed(cfg.seed, PRIOR_STREAM), self.global_step))
    }

    /// One forward, backward and update. `q` is required exactly when the
    /// bundle is conditional and is used for both real and generated codes.
    pub fn step(&mut self, x: &Tensor, q: Option<&Tensor>, cfg: &TrainConfig) -> Result<StepReport> {
        let w = &cfg.weights;
        let train_decoder = w.alpha_recon > 0.0;
        let train_generator = w.beta > 0.0;
        let u = self.step_noise(x.rows(), cfg)?;
        let step_no = self.global_step as usize + 1;

        let b = &self.bundle;
        let mut tape = Tape::new();
        let bound = BoundBundle {
            encoder: b.encoder.bind(&mut tape, true),
            decoder: b.decoder.bind(&mut tape, train_decoder),
            noise_generator: b.noise_generator.bind(&mut tape, train_generator),
        };
        let obj = match objective(&mut tape, b, &bound, x, q, &u, cfg) {
            Err(Error::NonFinite { .. }) => return Err(Error::NonFinite { step: step_no }),
            r => r?,
        };
        if !obj.loss.is_finite() || !tape.value(obj.total).item().is_finite() {
            return Err(Error::NonFinite { step: step_no });
        }

        let mut leaves = bound.encoder.vars.clone();
        if train_decoder {
            leaves.extend(&bound.decoder.vars);
        }
        if train_generator {
            leaves.extend(&bound.noise_generator.vars);
        }
        let grads = tape.backward(obj.total, &leaves)?;

        let bundle = &mut self.bundle;
        self.optimizers
            .encoder
            .step_from(&mut bundle.encoder.params, &bound.encoder, &grads)?;
        if train_decoder {
            self.optimizers
                .decoder
                .step_from(&mut bundle.decoder.params, &bound.decoder, &grads)?;
        }
        if train_generator {
            self.optimizers
                .noise_generator
                .step_from(&mut bundle.noise_generator.params, &bound.noise_generator, &grads)?;
        }
        self.global_step += 1;
        Ok(StepReport {
            loss: obj.loss,
            sinkhorn: obj.sinkhorn,
        })
    }

    /// Runs one epoch of shuffled full batches; returns the logged rows.
    pub fn run_epoch(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<HistoryRow>> {
        let mut rows = Vec::new();
        for batch in data.batches(cfg.batch_size, cfg.seed, self.epochs_completed)? {
            let q = if self.bundle.is_conditional() {
                batch.conditions.as_ref()
            } else {
                None
            };
            let rep = self.step(&batch.images, q, cfg)?;
            if self.global_step % cfg.log_every as u64 == 0 {
                rows.push(HistoryRow {
                    step: self.global_step,
                    loss: rep.loss,
                    sinkhorn_iters: rep.sinkhorn.iterations,
                    marginal_violation: rep.sinkhorn.marginal_violation,
                });
            }
        }
        self.epochs_completed += 1;
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle.clone(),
            optimizers: self.optimizers.clone(),
            epochs_completed: self.epochs_completed,
            global_step: self.global_step,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Trainer {
            bundle: ck.bundle,
            optimizers: ck.optimizers,
            epochs_completed: ck.epochs_completed,
            global_step: ck.global_step,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Rows logged by this call.
    pub history: TrainHistory,
}

fn open_history(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let exists = path.exists();
    let file = if append && exists {
        OpenOptions::new().append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if !(append && exists) {
        writeln!(w, "{HISTORY_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Trains until `cfg.epochs` epochs are complete, resuming from
/// `cfg.resume_from` when set. The checkpoint is rewritten after every
/// epoch; on a non-finite loss the last one is left in place.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let resuming = cfg.resume_from.is_some();
    let mut trainer = match &cfg.resume_from {
        Some(p) => {
            let t = Trainer::from_checkpoint(Checkpoint::load(p)?);
            if t.bundle.is_conditional() != cfg.conditional {
                return Err(Error::invalid("checkpoint conditioning differs from the config"));
            }
            t
        }
        None => Trainer::new(cfg, data)?,
    };
    if trainer.bundle.image != data.shape {
        return Err(Error::invalid("dataset image size differs from the model"));
    }
    if cfg.batch_size > data.len() {
        return Err(Error::invalid(format!("batch size {} exceeds {} examples", cfg.batch_size, data.len())));
    }
    let mut hist_writer = match &cfg.history_path {
        Some(p) => Some((p.clone(), open_history(p, resuming)?)),
        None => None,
    };
    let mut history = TrainHistory::default();
    while (trainer.epochs_completed as usize) < cfg.epochs {
        let rows = trainer.run_epoch(data, cfg)?;
        if let Some((p, w)) = hist_writer.as_mut() {
            for r in &rows {
                writeln!(w, "{}", r.csv_line()).map_err(|e| Error::io(p.as_path(), e))?;
            }
            w.flush().map_err(|e| Error::io(p.as_path(), e))?;
        }
        history.rows.extend(rows);
        if let Some(p) = &cfg.checkpoint_path {
            trainer.checkpoint().save(p)?;
        }
    }
    Ok(TrainOutcome { trainer, history })
}

// ---------------------------------------------------------- checkpoint

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"E2ESAECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub optimizers: Optimizers,
    pub epochs_completed: u64,
    pub global_step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: needed {n} bytes at offset {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("checkpoint size overflows".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let raw = self.take(len.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| Error::Format(format!("checkpoint tensor: {e}")))
    }
}

fn write_arch(w: &mut Writer, a: &MlpArch) {
    w.u32(a.layer_sizes.len() as u32);
    for &s in &a.layer_sizes {
        w.u64(s as u64);
    }
    for act in &a.hidden_activations {
        w.0.push(act.code());
    }
    w.0.push(a.output_activation.code());
}

fn read_arch(r: &mut Reader<'_>) -> Result<MlpArch> {
    let n = r.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Format(format!("checkpoint network has {n} layer sizes")));
    }
    let layer_sizes = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let hidden_activations = (0..n - 2)
        .map(|_| r.u8().and_then(Activation::from_code))
        .collect::<Result<Vec<_>>>()?;
    let output_activation = Activation::from_code(r.u8()?)?;
    let arch = MlpArch {
        layer_sizes,
        hidden_activations,
        output_activation,
    };
    arch.validate().map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
    Ok(arch)
}

fn param_shapes(a: &MlpArch) -> Vec<Vec<usize>> {
    (0..a.num_layers())
        .flat_map(|l| [vec![a.layer_sizes[l], a.layer_sizes[l + 1]], vec![a.layer_sizes[l + 1]]])
        .collect()
}

fn read_network(r: &mut Reader<'_>) -> Result<Network> {
    let arch = read_arch(r)?;
    let shapes = param_shapes(&arch);
    let mut layers = Vec::with_capacity(arch.num_layers());
    for pair in shapes.chunks(2) {
        let weight = r.tensor(&pair[0])?;
        let bias = r.tensor(&pair[1])?;
        layers.push(Layer { weight, bias });
    }
    Ok(Network {
        arch,
        params: ModelParams { layers },
    })
}

fn write_adam(w: &mut Writer, s: &AdamState) {
    let c = s.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps] {
        w.f64(v);
    }
    w.u64(s.t);
    for t in s.m.iter().chain(&s.v) {
        w.tensor(t);
    }
}

fn read_adam(r: &mut Reader<'_>, arch: &MlpArch) -> Result<AdamState> {
    let config = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let t = r.u64()?;
    let shapes = param_shapes(arch);
    let m = shapes.iter().map(|s| r.tensor(s)).collect::<Result<Vec<_>>>()?;
    let v = shapes.iter().map(|s| r.tensor(s)).collect::<Result<Vec<_>>>()?;
    Ok(AdamState { config, t, m, v })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
        w.u32(CHECKPOINT_VERSION);
        let b = &self.bundle;
        for d in [b.latent_dim, b.condition_dim, b.prior_dim, b.image.height, b.image.width] {
            w.u64(d as u64);
        }
        for net in [&b.encoder, &b.decoder, &b.noise_generator] {
            write_arch(&mut w, &net.arch);
            for t in net.params.tensors() {
                w.tensor(t);
            }
        }
        let o = &self.optimizers;
        for s in [&o.encoder, &o.decoder, &o.noise_generator] {
            write_adam(&mut w, s);
        }
        w.u64(self.epochs_completed);
        w.u64(self.global_step);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r
            .take(8)
            .map_err(|_| Error::Format("file too short for a checkpoint header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(CHECKPOINT_MAGIC)
            )));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let latent_dim = r.usize()?;
        let condition_dim = r.usize()?;
        let prior_dim = r.usize()?;
        let image = ImageShape::new(r.usize()?, r.usize()?);
        let encoder = read_network(&mut r)?;
        let decoder = read_network(&mut r)?;
        let noise_generator = read_network(&mut r)?;
        let optimizers = Optimizers {
            encoder: read_adam(&mut r, &encoder.arch)?,
            decoder: read_adam(&mut r, &decoder.arch)?,
            noise_generator: read_adam(&mut r, &noise_generator.arch)?,
        };
        let epochs_completed = r.u64()?;
        let global_step = r.u64()?;
        if r.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.at
            )));
        }
        let bundle = ModelBundle {
            encoder,
            decoder,
            noise_generator,
            latent_dim,
            condition_dim,
            prior_dim,
            image,
        };
        bundle
            .validate()
            .map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))?;
        Ok(Checkpoint {
            bundle,
            optimizers,
            epochs_completed,
            global_step,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
