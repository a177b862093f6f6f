//! Training losses, all recorded on a [`Tape`].
//!
//! The joint objective is
//! `alpha_recon·recon + beta·sinkhorn + delta·diversity + gamma·weight_reg`,
//! where `recon = alpha_lap·lap1 + mse`. Terms whose weight is zero are left
//! off the tape entirely, so the networks they would touch receive exactly
//! zero gradient from them.

use std::sync::Arc;

use crate::autodiff::{Kernel, OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::ot::{Divergence, PointCloud, SinkhornParams};
use crate::tensor::{ImageShape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_recon: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Weight of the Laplacian-pyramid term inside the reconstruction loss.
    pub alpha_lap: f64,
    pub pyramid_levels: usize,
    /// Multiplier applied to condition coordinates before they join the latent codes.
    pub cond_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_recon: 1.0,
            beta: 1.0,
            delta: 0.01,
            gamma: 1e-4,
            alpha_lap: 0.0,
            pyramid_levels: 3,
            cond_scale: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [
            ("alpha_recon", self.alpha_recon),
            ("beta", self.beta),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("alpha_lap", self.alpha_lap),
            ("cond_scale", self.cond_scale),
        ];
        for (name, w) in ws {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite value ≥ 0, got {w}")));
            }
        }
        if self.pyramid_levels == 0 {
            return Err(Error::invalid("pyramid_levels must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityParams {
    pub p: f64,
    pub tau: f64,
}

impl Default for DiversityParams {
    fn default() -> Self {
        DiversityParams { p: 1.0, tau: 0.5 }
    }
}

impl DiversityParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.p >= 0.0) {
            return Err(Error::invalid(format!("p must be ≥ 0, got {}", self.p)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub sinkhorn: f64,
    pub diversity: f64,
    pub weight_reg: f64,
}

impl LossBreakdown {
    pub fn from_components(w: &LossWeights, recon: f64, sinkhorn: f64, diversity: f64, weight_reg: f64) -> Self {
        LossBreakdown {
            total: w.alpha_recon * recon + w.beta * sinkhorn + w.delta * diversity + w.gamma * weight_reg,
            recon,
            sinkhorn,
            diversity,
            weight_reg,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.recon, self.sinkhorn, self.diversity, self.weight_reg]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Convergence diagnostics of the Sinkhorn passes behind one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SinkhornStats {
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
}

impl From<&Divergence> for SinkhornStats {
    fn from(d: &Divergence) -> Self {
        SinkhornStats {
            iterations: d.iterations,
            marginal_violation: d.marginal_violation,
            converged: d.converged,
        }
    }
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.try_value(a)?.shape(), tape.try_value(b)?.shape());
    if sa != sb {
        return Err(Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok(())
}

/// Mean over all elements of `(x − x_rec)²`.
pub fn mse(tape: &mut Tape, x: Var, x_rec: Var) -> Result<Var> {
    same_shape(tape, "mse", x, x_rec)?;
    let d = tape.sub(x, x_rec)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// `Σ_j 4^j · mean|L^j(x) − L^j(x_rec)|` over Laplacian-pyramid levels
/// `j = 0..levels`, level 0 at full resolution. The last level is the
/// remaining low-pass image.
pub fn lap1(tape: &mut Tape, x: Var, x_rec: Var, shape: ImageShape, levels: usize) -> Result<Var> {
    same_shape(tape, "lap1", x, x_rec)?;
    if levels == 0 {
        return Err(Error::invalid("lap1 needs at least one level"));
    }
    if shape.height != shape.width {
        return Err(Error::invalid(format!(
            "lap1 needs square images, got {}×{}",
            shape.height, shape.width
        )));
    }
    let div = 1usize << (levels - 1);
    if shape.height % div != 0 {
        return Err(Error::invalid(format!(
            "image side {} is not divisible by 2^{} for {levels} pyramid levels",
            shape.height,
            levels - 1
        )));
    }
    let kernel = Arc::new(Kernel::binomial5());
    // The pyramid is linear, so it is built once on the difference image.
    let mut current = tape.sub(x, x_rec)?;
    let mut side = shape.height;
    let mut total: Option<Var> = None;
    for j in 0..levels {
        let band = if j + 1 < levels {
            let blur = tape.record(
                OpKind::FixedConv2d {
                    height: side,
                    width: side,
                    kernel: kernel.clone(),
                },
                &[current],
            )?;
            let down = tape.record(OpKind::Downsample2 { height: side, width: side }, &[blur])?;
            let up = tape.record(
                OpKind::Upsample2 {
                    height: side / 2,
                    width: side / 2,
                },
                &[down],
            )?;
            let band = tape.sub(current, up)?;
            current = down;
            side /= 2;
            band
        } else {
            current
        };
        let a = tape.abs(band)?;
        let m = tape.mean(a)?;
        let term = tape.scale(m, 4f64.powi(j as i32))?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("levels ≥ 1"))
}

/// `alpha_lap · lap1 + mse`; with `alpha_lap = 0` the pyramid is skipped.
pub fn reconstruction_loss(
    tape: &mut Tape,
    x: Var,
    x_rec: Var,
    shape: ImageShape,
    w: &LossWeights,
) -> Result<Var> {
    let m = mse(tape, x, x_rec)?;
    if w.alpha_lap == 0.0 {
        return Ok(m);
    }
    let l = lap1(tape, x, x_rec, shape, w.pyramid_levels)?;
    let l = tape.scale(l, w.alpha_lap)?;
    tape.add(l, m)
}

/// Value and gradient of `p · Σ_{i≠j} m_ij · cos(e_i, e_j)²` with
/// `m_ij = [|cos(e_i, e_j)| ≥ τ]`. The mask is held constant. Rows with zero
/// norm contribute nothing.
pub fn diversity_value_and_grad(e: &Tensor, params: &DiversityParams) -> (f64, Tensor) {
    let (n, d) = (e.rows(), e.cols());
    let norms: Vec<f64> = (0..n)
        .map(|i| e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        if norms[i] < 1e-12 {
            continue;
        }
        for j in (i + 1)..n {
            if norms[j] < 1e-12 {
                continue;
            }
            let (ei, ej) = (e.row(i), e.row(j));
            let dot: f64 = ei.iter().zip(ej).map(|(a, b)| a * b).sum();
            let nn = norms[i] * norms[j];
            let c = dot / nn;
            if c.abs() < params.tau {
                continue;
            }
            // Both orderings (i, j) and (j, i).
            value += 2.0 * params.p * c * c;
            let k = 4.0 * params.p * c;
            let (ci, cj) = (c / (norms[i] * norms[i]), c / (norms[j] * norms[j]));
            for t in 0..d {
                grad[i * d + t] += k * (ej[t] / nn - ci * ei[t]);
                grad[j * d + t] += k * (ei[t] / nn - cj * ej[t]);
            }
        }
    }
    (value, Tensor::from_parts(vec![n, d], grad))
}

/// Masked squared-cosine diversity penalty over a batch of latent codes.
pub fn diversity_regularizer(tape: &mut Tape, e: Var, params: &DiversityParams) -> Result<Var> {
    params.validate()?;
    let codes = tape.try_value(e)?;
    if codes.shape().len() != 2 || codes.rows() < 2 {
        return Err(Error::invalid(format!(
            "diversity needs a batch of at least 2 codes, got shape {:?}",
            codes.shape()
        )));
    }
    let (value, grad) = diversity_value_and_grad(codes, params);
    tape.scalar_with_gradients(value, &[(e, grad)])
}

/// Sum of squares of a weight matrix (the encoder's last layer).
pub fn weight_reg(tape: &mut Tape, weight: Var) -> Result<Var> {
    let sq = tape.square(weight)?;
    tape.sum(sq)
}

/// Debiased Sinkhorn divergence between two batches of codes, with
/// gradients flowing into both.
pub fn sinkhorn_loss(tape: &mut Tape, e: Var, e_gen: Var, sp: &SinkhornParams) -> Result<(Var, Divergence)> {
    let a = PointCloud::uniform(tape.try_value(e)?.clone())?;
    let b = PointCloud::uniform(tape.try_value(e_gen)?.clone())?;
    let div = Divergence::compute(&a, &b, sp)?;
    let v = tape.scalar_with_gradients(div.value, &[(e, div.grad_a.clone()), (e_gen, div.grad_b.clone())])?;
    Ok((v, div))
}

fn concat_scaled(codes: &Tensor, cond: &Tensor, scale: f64) -> Result<Tensor> {
    if codes.rows() != cond.rows() {
        return Err(Error::invalid(format!(
            "{} codes paired with {} condition rows",
            codes.rows(),
            cond.rows()
        )));
    }
    let (d, k) = (codes.cols(), cond.cols());
    let mut data = Vec::with_capacity(codes.rows() * (d + k));
    for i in 0..codes.rows() {
        data.extend_from_slice(codes.row(i));
        data.extend(cond.row(i).iter().map(|v| scale * v));
    }
    Tensor::matrix(codes.rows(), d + k, data)
}

/// Sinkhorn divergence between codes augmented with their scaled
/// conditions. Conditions are data: gradients reach `e` and `e_gen` only.
pub fn conditional_sinkhorn_loss(
    tape: &mut Tape,
    e: Var,
    q: &Tensor,
    e_gen: Var,
    q_gen: &Tensor,
    cond_scale: f64,
    sp: &SinkhornParams,
) -> Result<(Var, Divergence)> {
    if q.cols() != q_gen.cols() {
        return Err(Error::DimensionMismatch(q.cols(), q_gen.cols()));
    }
    let ev = tape.try_value(e)?;
    let gv = tape.try_value(e_gen)?;
    let latent = ev.cols();
    let a = PointCloud::uniform(concat_scaled(ev, q, cond_scale)?)?;
    let b = PointCloud::uniform(concat_scaled(gv, q_gen, cond_scale)?)?;
    let div = Divergence::compute(&a, &b, sp)?;
    let ga = div.grad_a.slice_cols(0, latent);
    let gb = div.grad_b.slice_cols(0, latent);
    let v = tape.scalar_with_gradients(div.value, &[(e, ga), (e_gen, gb)])?;
    Ok((v, div))
}

/// Everything the joint objective reads from one forward pass.
pub struct JointInputs<'a> {
    pub x: Var,
    pub x_rec: Var,
    pub e: Var,
    pub e_gen: Var,
    /// Encoder's final-layer weight matrix.
    pub encoder_last_weight: Var,
    /// Conditions paired with `e` and `e_gen` for the conditional objective.
    pub conditions: Option<(&'a Tensor, &'a Tensor)>,
    pub image: ImageShape,
}

/// The joint objective. Returns the differentiable total, the component
/// breakdown and Sinkhorn diagnostics.
pub fn joint_loss(
    tape: &mut Tape,
    inp: &JointInputs<'_>,
    w: &LossWeights,
    div: &DiversityParams,
    sp: &SinkhornParams,
) -> Result<(Var, LossBreakdown, SinkhornStats)> {
    w.validate()?;
    let (ed, gd) = (tape.try_value(inp.e)?.cols(), tape.try_value(inp.e_gen)?.cols());
    if ed != gd {
        return Err(Error::DimensionMismatch(ed, gd));
    }
    let recon = reconstruction_loss(tape, inp.x, inp.x_rec, inp.image, w)?;
    let (sink, divergence) = match inp.conditions {
        Some((q, q_gen)) => conditional_sinkhorn_loss(tape, inp.e, q, inp.e_gen, q_gen, w.cond_scale, sp)?,
        None => sinkhorn_loss(tape, inp.e, inp.e_gen, sp)?,
    };
    let diversity = diversity_regularizer(tape, inp.e, div)?;
    let wreg = weight_reg(tape, inp.encoder_last_weight)?;

    let parts = [
        (recon, w.alpha_recon),
        (sink, w.beta),
        (diversity, w.delta),
        (wreg, w.gamma),
    ];
    let mut total: Option<Var> = None;
    for (term, weight) in parts {
        if weight == 0.0 {
            continue;
        }
        let scaled = tape.scale(term, weight)?;
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let breakdown = LossBreakdown::from_components(
        w,
        tape.value(recon).item(),
        divergence.value,
        tape.value(diversity).item(),
        tape.value(wreg).item(),
    );
    Ok((total, breakdown, SinkhornStats::from(&divergence)))
}
