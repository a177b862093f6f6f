//! Encoder, decoder and noise generator as multilayer perceptrons.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ImageShape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            c => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(v),
            Activation::Relu => tape.relu(v),
            Activation::Sigmoid => tape.sigmoid(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpArch {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    /// One entry per hidden layer.
    pub hidden_activations: Vec<Activation>,
    pub output_activation: Activation,
}

impl MlpArch {
    /// All hidden layers share one activation.
    pub fn new(layer_sizes: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let n_hidden = layer_sizes.len().saturating_sub(2);
        let arch = MlpArch {
            layer_sizes,
            hidden_activations: vec![hidden; n_hidden],
            output_activation: output,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output sizes"));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!("zero layer size in {:?}", self.layer_sizes)));
        }
        if self.hidden_activations.len() != self.layer_sizes.len() - 2 {
            return Err(Error::invalid("one activation per hidden layer required"));
        }
        if self
            .hidden_activations
            .iter()
            .any(|a| *a == Activation::Identity)
        {
            return Err(Error::invalid("hidden layers use relu or sigmoid"));
        }
        if self.output_activation == Activation::Relu {
            return Err(Error::invalid("output activation is identity or sigmoid"));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activations[layer]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Parameter tensors in `w0, b0, w1, b1, …` order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Zeroes every weight and bias.
    pub fn zeroed(&self) -> ModelParams {
        let mut p = self.clone();
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        p
    }
}

/// Fan-in scaled normal weights (`sqrt(2/fan_in)` ahead of relu,
/// `sqrt(1/fan_in)` otherwise) and zero biases.
pub fn init_params(arch: &MlpArch, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.num_layers());
    for l in 0..arch.num_layers() {
        let (fan_in, fan_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
        let gain = if arch.layer_activation(l) == Activation::Relu { 2.0 } else { 1.0 };
        let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
        let w = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        layers.push(Layer {
            weight: Tensor::matrix(fan_in, fan_out, w)?,
            bias: Tensor::zeros(&[fan_out]),
        });
    }
    Ok(ModelParams { layers })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: MlpArch,
    pub params: ModelParams,
}

/// Parameters of one network placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    /// Same order as [`ModelParams::tensors`].
    pub vars: Vec<Var>,
}

impl BoundNetwork {
    pub fn last_weight(&self) -> Var {
        self.vars[self.vars.len() - 2]
    }
}

impl Network {
    pub fn init(arch: MlpArch, seed: u64) -> Result<Self> {
        let params = init_params(&arch, seed)?;
        Ok(Network { arch, params })
    }

    /// Places the parameters on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        let vars = self
            .params
            .tensors()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundNetwork { vars }
    }

    /// Forward pass through the first `upto` layers.
    pub fn forward_partial(&self, tape: &mut Tape, bound: &BoundNetwork, x: Var, upto: usize) -> Result<Var> {
        let width = tape.try_value(x)?.cols();
        if tape.try_value(x)?.shape().len() != 2 || width != self.arch.input_size() {
            return Err(Error::invalid(format!(
                "network expects inputs of width {}, got shape {:?}",
                self.arch.input_size(),
                tape.try_value(x)?.shape()
            )));
        }
        let mut h = x;
        for l in 0..upto.min(self.arch.num_layers()) {
            let z = tape.matmul(h, bound.vars[2 * l])?;
            let z = tape.add(z, bound.vars[2 * l + 1])?;
            h = self.arch.layer_activation(l).apply(tape, z)?;
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundNetwork, x: Var) -> Result<Var> {
        self.forward_partial(tape, bound, x, self.arch.num_layers())
    }

    /// Forward pass on plain values.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.apply_partial(x, self.arch.num_layers())
    }

    pub fn apply_partial(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward_partial(&mut tape, &bound, xv, upto)?;
        Ok(tape.value(out).clone())
    }
}

/// Default widths for the three networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BundleConfig {
    pub image: ImageShape,
    pub latent_dim: usize,
    pub prior_dim: usize,
    pub condition_dim: usize,
    /// Width of the two encoder and two decoder hidden layers.
    pub hidden: usize,
    /// Width of the three noise-generator hidden layers.
    pub generator_hidden: usize,
    pub decoder_output: Activation,
}

impl BundleConfig {
    pub fn new(image: ImageShape) -> Self {
        BundleConfig {
            image,
            latent_dim: 16,
            prior_dim: 16,
            condition_dim: 0,
            hidden: 256,
            generator_hidden: 128,
            decoder_output: Activation::Sigmoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub encoder: Network,
    pub decoder: Network,
    pub noise_generator: Network,
    pub latent_dim: usize,
    pub condition_dim: usize,
    pub prior_dim: usize,
    pub image: ImageShape,
}

impl ModelBundle {
    pub fn new(cfg: &BundleConfig, seed: u64) -> Result<Self> {
        use Activation::*;
        let px = cfg.image.pixels();
        let h = cfg.hidden;
        let gh = cfg.generator_hidden;
        let enc = MlpArch::new(vec![px, h, h, cfg.latent_dim], Relu, Identity)?;
        let dec = MlpArch::new(vec![cfg.latent_dim, h, h, px], Relu, cfg.decoder_output)?;
        let gen = MlpArch::new(
            vec![cfg.prior_dim + cfg.condition_dim, gh, gh, gh, cfg.latent_dim],
            Relu,
            Identity,
        )?;
        let bundle = ModelBundle {
            encoder: Network::init(enc, seed)?,
            decoder: Network::init(dec, seed.wrapping_add(1))?,
            noise_generator: Network::init(gen, seed.wrapping_add(2))?,
            latent_dim: cfg.latent_dim,
            condition_dim: cfg.condition_dim,
            prior_dim: cfg.prior_dim,
            image: cfg.image,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.encoder.arch.output_size() == self.latent_dim
            && self.decoder.arch.input_size() == self.latent_dim
            && self.noise_generator.arch.output_size() == self.latent_dim
            && self.noise_generator.arch.input_size() == self.prior_dim + self.condition_dim
            && self.encoder.arch.input_size() == self.image.pixels()
            && self.decoder.arch.output_size() == self.image.pixels();
        if !ok {
            return Err(Error::invalid("network sizes are inconsistent with the bundle dimensions"));
        }
        Ok(())
    }

    pub fn is_conditional(&self) -> bool {
        self.condition_dim > 0
    }

    pub fn encode(&self, tape: &mut Tape, bound: &BoundNetwork, x: Var) -> Result<Var> {
        self.encoder.forward(tape, bound, x)
    }

    pub fn decode(&self, tape: &mut Tape, bound: &BoundNetwork, e: Var) -> Result<Var> {
        self.decoder.forward(tape, bound, e)
    }

    /// Generator input: `u`, or `u ⌢ q` for a conditional bundle.
    fn generator_input(&self, tape: &mut Tape, u: Var, q: Option<Var>) -> Result<Var> {
        match (q, self.condition_dim) {
            (None, 0) => Ok(u),
            (Some(q), k) if k > 0 => {
                let (nu, nq) = (tape.try_value(u)?.rows(), tape.try_value(q)?.rows());
                if nu != nq {
                    return Err(Error::invalid(format!("{nu} noise rows but {nq} condition rows")));
                }
                tape.concat(u, q)
            }
            (None, k) => Err(Error::invalid(format!(
                "conditional bundle (condition_dim {k}) needs conditions"
            ))),
            (Some(_), _) => Err(Error::invalid("unconditional bundle was given conditions")),
        }
    }

    pub fn generate_codes(&self, tape: &mut Tape, bound: &BoundNetwork, u: Var, q: Option<Var>) -> Result<Var> {
        let input = self.generator_input(tape, u, q)?;
        self.noise_generator.forward(tape, bound, input)
    }

    pub fn encode_values(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.apply(x)
    }

    pub fn decode_values(&self, e: &Tensor) -> Result<Tensor> {
        self.decoder.apply(e)
    }

    pub fn generate_values(&self, u: &Tensor, q: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.noise_generator.bind(&mut tape, false);
        let uv = tape.constant(u.clone());
        let qv = q.map(|q| tape.constant(q.clone()));
        let out = self.generate_codes(&mut tape, &bound, uv, qv)?;
        Ok(tape.value(out).clone())
    }

    /// Prior noise → codes → images.
    pub fn sample_images(&self, n: usize, q: Option<&Tensor>, seed: u64) -> Result<Tensor> {
        let u = sample_prior(n, self.prior_dim, seed)?;
        let codes = self.generate_values(&u, q)?;
        self.decode_values(&codes)
    }

    /// Codes at `steps` evenly spaced points between `(u0, q0)` and `(u1, q1)`.
    pub fn interpolate_codes(
        &self,
        u0: &Tensor,
        u1: &Tensor,
        q0: Option<&Tensor>,
        q1: Option<&Tensor>,
        steps: usize,
    ) -> Result<Vec<Tensor>> {
        if steps < 2 {
            return Err(Error::invalid("interpolation needs at least 2 steps"));
        }
        if u0.shape() != u1.shape() {
            return Err(Error::invalid("interpolation endpoints differ in shape"));
        }
        let lerp = |a: &Tensor, b: &Tensor, t: f64| -> Tensor {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        (0..steps)
            .map(|k| {
                let t = k as f64 / (steps - 1) as f64;
                let u = lerp(u0, u1, t);
                let q = match (q0, q1) {
                    (Some(a), Some(b)) => Some(lerp(a, b, t)),
                    (None, None) => None,
                    _ => return Err(Error::invalid("both or neither endpoint needs conditions")),
                };
                self.generate_values(&u, q.as_ref())
            })
            .collect()
    }
}

/// `n × prior_dim` i.i.d. standard normal draws.
pub fn sample_prior(n: usize, prior_dim: usize, seed: u64) -> Result<Tensor> {
    if n == 0 || prior_dim == 0 {
        return Err(Error::invalid("prior sample needs n ≥ 1 and prior_dim ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * prior_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::matrix(n, prior_dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bundle(cond: usize) -> ModelBundle {
        let mut cfg = BundleConfig::new(ImageShape::square(4));
        cfg.latent_dim = 8;
        cfg.prior_dim = 5;
        cfg.condition_dim = cond;
        cfg.hidden = 12;
        cfg.generator_hidden = 10;
        ModelBundle::new(&cfg, 3).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let arch = MlpArch::new(vec![5, 7, 3], Activation::Relu, Activation::Identity).unwrap();
        let a = init_params(&arch, 9).unwrap();
        let b = init_params(&arch, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.data().iter().all(|&v| v == 0.0)));
        assert_ne!(a, init_params(&arch, 10).unwrap());
    }

    #[test]
    fn relu_init_std() {
        let arch = MlpArch::new(vec![100, 100, 1], Activation::Relu, Activation::Identity).unwrap();
        let p = init_params(&arch, 1).unwrap();
        let w = p.layers[0].weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = (2.0f64 / 100.0).sqrt();
        assert!((std - target).abs() / target < 0.2, "{std}");
    }

    #[test]
    fn arch_validation() {
        assert!(MlpArch::new(vec![3], Activation::Relu, Activation::Identity).is_err());
        assert!(MlpArch::new(vec![3, 0, 2], Activation::Relu, Activation::Identity).is_err());
        assert!(MlpArch::new(vec![3, 2], Activation::Relu, Activation::Relu).is_err());
    }

    #[test]
    fn shape_contracts() {
        let b = small_bundle(0);
        let x = Tensor::full(&[10, 16], 0.5);
        let e = b.encode_values(&x).unwrap();
        assert_eq!(e.shape(), &[10, 8]);
        let xr = b.decode_values(&e).unwrap();
        assert_eq!(xr.shape(), &[10, 16]);
        assert!(xr.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let u = sample_prior(7, 5, 0).unwrap();
        assert_eq!(b.generate_values(&u, None).unwrap().shape(), &[7, 8]);
        assert!(b.encode_values(&Tensor::zeros(&[2, 15])).is_err());
        assert!(b.decode_values(&Tensor::zeros(&[2, 9])).is_err());
    }

    #[test]
    fn zero_weights_give_zero_codes() {
        let mut b = small_bundle(2);
        b.encoder.params = b.encoder.params.zeroed();
        b.noise_generator.params = b.noise_generator.params.zeroed();
        let e = b.encode_values(&Tensor::full(&[3, 16], 0.7)).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        let u = sample_prior(3, 5, 4).unwrap();
        let q = Tensor::full(&[3, 2], 1.5);
        let g = b.generate_values(&u, Some(&q)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditional_presence_must_match() {
        let uncond = small_bundle(0);
        let cond = small_bundle(9);
        assert_eq!(cond.noise_generator.arch.input_size(), 5 + 9);
        let u = sample_prior(3, 5, 4).unwrap();
        let q = Tensor::zeros(&[3, 9]);
        assert!(uncond.generate_values(&u, Some(&q)).is_err());
        assert!(cond.generate_values(&u, None).is_err());
        assert!(cond.generate_values(&u, Some(&Tensor::zeros(&[2, 9]))).is_err());
        assert_eq!(cond.generate_values(&u, Some(&q)).unwrap().shape(), &[3, 8]);
    }

    #[test]
    fn prior_moments_and_determinism() {
        let a = sample_prior(10_000, 1, 42).unwrap();
        assert_eq!(a, sample_prior(10_000, 1, 42).unwrap());
        assert_eq!(a.shape(), &[10_000, 1]);
        let n = a.len() as f64;
        let mean = a.sum() / n;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((0.9..=1.1).contains(&var), "{var}");
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let b = small_bundle(3);
        let u0 = sample_prior(2, 5, 1).unwrap();
        let u1 = sample_prior(2, 5, 2).unwrap();
        let q0 = Tensor::full(&[2, 3], -1.0);
        let q1 = Tensor::full(&[2, 3], 2.0);
        let codes = b.interpolate_codes(&u0, &u1, Some(&q0), Some(&q1), 3).unwrap();
        assert_eq!(codes.len(), 3);
        assert_eq!(codes[0], b.generate_values(&u0, Some(&q0)).unwrap());
        assert_eq!(codes[2], b.generate_values(&u1, Some(&q1)).unwrap());
        let um = u0.data().iter().zip(u1.data()).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
        let um = Tensor::matrix(2, 5, um).unwrap();
        let qm = Tensor::full(&[2, 3], 0.5);
        assert_eq!(codes[1], b.generate_values(&um, Some(&qm)).unwrap());
        assert!(b.interpolate_codes(&u0, &u1, Some(&q0), Some(&q1), 1).is_err());
    }
}
