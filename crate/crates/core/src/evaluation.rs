//! Sample-quality measures: Fréchet distance and Sinkhorn divergence on
//! classifier features, per-channel MAE against expected channel sums, and
//! per-channel 1-D Wasserstein distances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::datasets::{batch_indices, ChannelMasks, Dataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::models::{sample_prior, Activation, MlpArch, ModelBundle, Network};
use crate::ot::{sinkhorn_divergence, PointCloud, SinkhornParams};
use crate::tensor::Tensor;
use crate::training::{AdamConfig, AdamState};

// ------------------------------------------------------------ classifier

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    /// Hidden widths; empty gives a linear classifier.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub holdout: f64,
    /// Z-score inputs with training-split statistics.
    pub standardize: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64, 32],
            epochs: 10,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            holdout: 0.2,
            standardize: false,
        }
    }
}

impl ClassifierConfig {
    /// Linear softmax classifier on standardized inputs.
    pub fn linear_probe(seed: u64) -> Self {
        ClassifierConfig {
            hidden: Vec::new(),
            epochs: 30,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed,
            holdout: 0.3,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub network: Network,
    pub classes: usize,
    /// Per-column mean and standard deviation applied before the network.
    pub standardization: Option<(Vec<f64>, Vec<f64>)>,
    pub heldout_accuracy: f64,
}

/// Mean softmax cross-entropy of `logits` against `labels` and its gradient.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (n, k) = (logits.rows(), logits.cols());
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - row[labels[i]];
        for j in 0..k {
            grad[i * k + j] = ((row[j] - lse).exp() - f64::from(u8::from(j == labels[i]))) / n as f64;
        }
    }
    (loss / n as f64, Tensor::matrix(n, k, grad).expect("n×k"))
}

fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-12)).collect())
}

fn standardize(x: &Tensor, stats: &(Vec<f64>, Vec<f64>)) -> Tensor {
    let d = x.cols();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - stats.0[k % d]) / stats.1[k % d])
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

impl Classifier {
    fn prepare(&self, x: &Tensor) -> Tensor {
        match &self.standardization {
            Some(s) => standardize(x, s),
            None => x.clone(),
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.network.apply(&self.prepare(x))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        Ok((0..l.rows())
            .map(|i| {
                let r = l.row(i);
                (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).expect("k ≥ 2")
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let p = self.predict(x)?;
        Ok(p.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }
}

/// Trains a softmax classifier with Adam on a seeded train/holdout split and
/// reports held-out accuracy.
pub fn train_classifier(x: &Tensor, labels: &[usize], cfg: &ClassifierConfig) -> Result<Classifier> {
    let n = x.rows();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} inputs", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::invalid("a classifier needs at least two classes"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1)));
    }
    let k = ((n as f64) * cfg.holdout).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("holdout {} leaves an empty split of {n}", cfg.holdout)));
    }
    let (test_idx, train_idx) = idx.split_at(k);
    let raw_train = x.select_rows(train_idx);
    let standardization = cfg.standardize.then(|| column_stats(&raw_train));
    let mut sizes = vec![x.cols()];
    sizes.extend(&cfg.hidden);
    sizes.push(classes);
    let arch = MlpArch::new(sizes, Activation::Relu, Activation::Identity)?;
    let mut clf = Classifier {
        network: Network::init(arch, cfg.seed)?,
        classes,
        standardization,
        heldout_accuracy: 0.0,
    };
    let xtr = clf.prepare(&raw_train);
    let ytr: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let mut adam = AdamState::new(cfg.adam, &clf.network.params);
    let bs = cfg.batch_size.min(xtr.rows());
    for epoch in 0..cfg.epochs {
        for b in batch_indices(xtr.rows(), bs, cfg.seed, epoch as u64)? {
            let mut tape = Tape::new();
            let bound = clf.network.bind(&mut tape, true);
            let xv = tape.constant(xtr.select_rows(&b));
            let logits = clf.network.forward(&mut tape, &bound, xv)?;
            let yb: Vec<usize> = b.iter().map(|&i| ytr[i]).collect();
            let (loss, g) = softmax_cross_entropy(tape.value(logits), &yb);
            let l = tape.scalar_with_gradients(loss, &[(logits, g)])?;
            let grads = tape.backward(l, &bound.vars)?;
            adam.step_from(&mut clf.network.params, &bound, &grads)?;
        }
    }
    let yte: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    clf.heldout_accuracy = clf.accuracy(&x.select_rows(test_idx), &yte)?;
    Ok(clf)
}

/// Penultimate-layer activations of a classifier trained on image classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub classifier: Classifier,
    /// Number of layers applied; `num_layers − 1` is the penultimate layer.
    pub feature_layer: usize,
}

impl FeatureExtractor {
    pub fn train(data: &Dataset, cfg: &ClassifierConfig) -> Result<Self> {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("feature classifier needs class labels"))?;
        if cfg.hidden.is_empty() {
            return Err(Error::invalid("feature classifier needs a hidden layer"));
        }
        let classifier = train_classifier(&data.images, labels, cfg)?;
        let feature_layer = classifier.network.arch.num_layers() - 1;
        Ok(FeatureExtractor {
            classifier,
            feature_layer,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.classifier.network.arch.layer_sizes[self.feature_layer]
    }

    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let x = self.classifier.prepare(images);
        self.classifier.network.apply_partial(&x, self.feature_layer)
    }
}

// ----------------------------------------------------------------- FID

/// Mean and covariance (`n − 1` denominator) of feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::invalid("covariance size differs from mean size"));
        }
        Ok(GaussianFit { mean, cov })
    }

    pub fn fit(features: &Tensor) -> Result<Self> {
        let (n, d) = (features.rows(), features.cols());
        if n < 2 || d == 0 {
            return Err(Error::invalid("a Gaussian fit needs at least two feature rows"));
        }
        if !features.all_finite() {
            return Err(Error::invalid("features contain non-finite values"));
        }
        let m = DMatrix::from_row_slice(n, d, features.data());
        let mean = DVector::from_iterator(d, (0..d).map(|j| m.column(j).mean()));
        let mut centered = m;
        for j in 0..d {
            let mu = mean[j];
            centered.column_mut(j).add_scalar_mut(-mu);
        }
        let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
        Ok(GaussianFit { mean, cov })
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½)`, with the trace of the root taken
/// from the symmetric `Σa^½ Σb Σa^½`. Negative eigenvalues are clamped to 0
/// and so is the result.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::DimensionMismatch(a.mean.len(), b.mean.len()));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let ra = sym_sqrt(&a.cov);
    let inner = &ra * &b.cov * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * tr_root).max(0.0))
}

pub fn fid(features_a: &Tensor, features_b: &Tensor) -> Result<f64> {
    if features_a.cols() != features_b.cols() {
        return Err(Error::DimensionMismatch(features_a.cols(), features_b.cols()));
    }
    frechet_distance(&GaussianFit::fit(features_a)?, &GaussianFit::fit(features_b)?)
}

// ------------------------------------------------- other distances

/// Debiased Sinkhorn divergence between uniform feature clouds.
pub fn sinkhorn_feature_distance(features_a: &Tensor, features_b: &Tensor, sp: &SinkhornParams) -> Result<f64> {
    sinkhorn_divergence(
        &PointCloud::uniform(features_a.clone())?,
        &PointCloud::uniform(features_b.clone())?,
        sp,
    )
}

/// `[n, channels]` sums of each image over each mask.
pub fn channel_sums(images: &Tensor, masks: &ChannelMasks) -> Result<Tensor> {
    let (n, p, c) = (images.rows(), images.cols(), masks.channels());
    if masks.masks.cols() != p {
        return Err(Error::Shape {
            op: "channel_sums",
            lhs: images.shape().to_vec(),
            rhs: masks.masks.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let img = images.row(i);
        for ch in 0..c {
            out[i * c + ch] = img.iter().zip(masks.masks.row(ch)).map(|(v, m)| v * m).sum();
        }
    }
    Tensor::matrix(n, c, out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMae {
    pub per_channel: Vec<f64>,
    /// Mean and standard deviation of all absolute errors.
    pub mean: f64,
    pub std: f64,
}

pub fn channel_mae(generated: &Tensor, truth: &Tensor) -> Result<ChannelMae> {
    if generated.shape() != truth.shape() {
        return Err(Error::Shape {
            op: "channel_mae",
            lhs: generated.shape().to_vec(),
            rhs: truth.shape().to_vec(),
        });
    }
    let (n, c) = (generated.rows(), generated.cols());
    let errs: Vec<f64> = generated.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).collect();
    let per_channel = (0..c)
        .map(|ch| (0..n).map(|i| errs[i * c + ch]).sum::<f64>() / n as f64)
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errs.len() as f64).sqrt();
    Ok(ChannelMae { per_channel, mean, std })
}

/// Exact 1-D W₁ by sorted pairing. The larger sample is subsampled without
/// replacement (seeded) to the size of the smaller one.
pub fn wasserstein_1d(a: &[f64], b: &[f64], seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("wasserstein_1d needs nonempty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("wasserstein_1d needs finite samples"));
    }
    let m = a.len().min(b.len());
    let reduce = |s: &[f64]| -> Vec<f64> {
        if s.len() == m {
            s.to_vec()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, s.len(), m).into_iter().map(|i| s[i]).collect()
        }
    };
    let (mut x, mut y) = (reduce(a), reduce(b));
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / m as f64)
}

// ------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub seed: u64,
    pub sinkhorn: SinkhornParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            sinkhorn: SinkhornParams::default().with_iters(500, 1e-6),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub fid: f64,
    pub sinkhorn: f64,
    pub channel_mae: Option<ChannelMae>,
    pub channel_wasserstein: Option<Vec<f64>>,
    pub n_real: usize,
    pub n_generated: usize,
    pub config: String,
}

impl EvalReport {
    pub fn wasserstein_mean(&self) -> Option<f64> {
        self.channel_wasserstein
            .as_ref()
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
    }

    /// `measure,channel,value` rows; summary rows use channel `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure,channel,value\n");
        let mut row = |m: &str, c: &str, v: f64| out.push_str(&format!("{m},{c},{v}\n"));
        row("fid", "all", self.fid);
        row("sinkhorn", "all", self.sinkhorn);
        if let Some(mae) = &self.channel_mae {
            for (c, v) in mae.per_channel.iter().enumerate() {
                row("mae", &c.to_string(), *v);
            }
            row("mae_mean", "all", mae.mean);
            row("mae_std", "all", mae.std);
        }
        if let Some(w) = &self.channel_wasserstein {
            for (c, v) in w.iter().enumerate() {
                row("wasserstein", &c.to_string(), *v);
            }
            row("wasserstein_mean", "all", self.wasserstein_mean().unwrap_or(f64::NAN));
        }
        row("n_real", "all", self.n_real as f64);
        row("n_generated", "all", self.n_generated as f64);
        out.push_str(&format!("# {}\n", self.config));
        out
    }
}

/// Feature rows tagged `real` or `generated`.
pub fn feature_dump_csv(real: &Tensor, generated: &Tensor) -> String {
    let d = real.cols();
    let mut out: String = (0..d).map(|j| format!("f{j},")).collect();
    out.push_str("source\n");
    for (t, tag) in [(real, "real"), (generated, "generated")] {
        for i in 0..t.rows() {
            for v in t.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(tag);
            out.push('\n');
        }
    }
    out
}

/// Compares `generated` images with the real examples in `real`. When the
/// dataset carries expected channel sums, rows of `generated` are taken to be
/// paired with rows of `real` for the MAE.
pub fn evaluate_images(
    generated: &Tensor,
    real: &Dataset,
    extractor: &FeatureExtractor,
    cfg: &EvalConfig,
) -> Result<(EvalReport, String)> {
    let fr = extractor.features(&real.images)?;
    let fg = extractor.features(generated)?;
    let fid_v = fid(&fr, &fg)?;
    let sink = sinkhorn_feature_distance(&fr, &fg, &cfg.sinkhorn)?;
    let (mut mae, mut w1) = (None, None);
    if let Some(masks) = &real.channel_masks {
        let gc = channel_sums(generated, masks)?;
        let rc = channel_sums(&real.images, masks)?;
        let truth = real.reference_channels.as_ref().unwrap_or(&rc);
        if truth.rows() == gc.rows() {
            mae = Some(channel_mae(&gc, truth)?);
        }
        let col = |t: &Tensor, c: usize| (0..t.rows()).map(|i| t.get2(i, c)).collect::<Vec<_>>();
        w1 = Some(
            (0..masks.channels())
                .map(|c| wasserstein_1d(&col(&gc, c), &col(&rc, c), derive_seed(cfg.seed, c as u64)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let report = EvalReport {
        fid: fid_v,
        sinkhorn: sink,
        channel_mae: mae,
        channel_wasserstein: w1,
        n_real: real.len(),
        n_generated: generated.rows(),
        config: format!("seed={} sinkhorn={:?}", cfg.seed, cfg.sinkhorn),
    };
    Ok((report, feature_dump_csv(&fr, &fg)))
}

/// Samples one image per real example (conditioned on its conditions for a
/// conditional bundle) and evaluates them.
pub fn evaluate(
    bundle: &ModelBundle,
    real: &Dataset,
    extractor: &FeatureExtractor,
    cfg: &EvalConfig,
) -> Result<(EvalReport, String)> {
    let generated = generate_for(bundle, real, cfg.seed)?;
    evaluate_images(&generated, real, extractor, cfg)
}

/// Decoded samples paired with the rows of `real`.
pub fn generate_for(bundle: &ModelBundle, real: &Dataset, seed: u64) -> Result<Tensor> {
    let q = if bundle.is_conditional() {
        Some(
            real.conditions
                .as_ref()
                .ok_or_else(|| Error::invalid("conditional bundle needs dataset conditions"))?,
        )
    } else {
        None
    };
    let u = sample_prior(real.len(), bundle.prior_dim, seed)?;
    let codes = bundle.generate_values(&u, q)?;
    bundle.decode_values(&codes)
}
