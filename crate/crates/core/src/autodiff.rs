//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every forward operation is appended to a [`Tape`]; [`Tape::backward`]
//! walks the tape in reverse and accumulates exact adjoints. The op set is
//! closed (see [`OpKind`]); everything else is composed from it.
//!
//! Quantities whose gradient is computed by a dedicated routine (the
//! Sinkhorn divergence, the masked cosine regularizer, softmax
//! cross-entropy) enter the tape through [`Tape::scalar_with_gradients`],
//! which builds a first-order surrogate out of `mul`, `sum` and `add`
//! nodes: its value is the supplied value and its gradient is exactly the
//! supplied gradient.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Square convolution kernel applied with edge-clamped borders.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel needs odd size and size² weights, got size {size} with {} weights",
                weights.len()
            )));
        }
        Ok(Kernel { size, weights })
    }

    /// Separable binomial kernel: outer product of `[1,4,6,4,1] / 16`.
    pub fn binomial5() -> Self {
        let taps = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v| v / 16.0);
        let weights = taps
            .iter()
            .flat_map(|a| taps.iter().map(move |b| a * b))
            .collect();
        Kernel { size: 5, weights }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// The operations a tape can record.
///
/// Image operations act on `[batch, height * width]` tensors; the image
/// geometry travels with the op.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    /// Elementwise sum; the right operand may be a row broadcast over the batch.
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Square,
    Abs,
    Mean,
    Sum,
    ConcatLast,
    /// Convolution with a constant kernel; differentiable in the input only.
    FixedConv2d {
        height: usize,
        width: usize,
        kernel: Arc<Kernel>,
    },
    /// Keeps every second pixel along both axes.
    Downsample2 { height: usize, width: usize },
    /// Nearest-neighbour duplication to twice the size along both axes.
    Upsample2 { height: usize, width: usize },
    Scale(f64),
}

impl OpKind {
    /// Parses a parameter-free op kind by name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" | "subtract" => OpKind::Sub,
            "mul" | "elementwise-mul" => OpKind::Mul,
            "relu" => OpKind::Relu,
            "sigmoid" => OpKind::Sigmoid,
            "square" => OpKind::Square,
            "abs" => OpKind::Abs,
            "mean" | "mean-reduce" => OpKind::Mean,
            "sum" | "sum-reduce" => OpKind::Sum,
            "concat" | "concat-last-axis" => OpKind::ConcatLast,
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "elementwise-mul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Square => "square",
            OpKind::Abs => "abs",
            OpKind::Mean => "mean-reduce",
            OpKind::Sum => "sum-reduce",
            OpKind::ConcatLast => "concat-last-axis",
            OpKind::FixedConv2d { .. } => "fixed-kernel-2d-convolution",
            OpKind::Downsample2 { .. } => "downsample-by-2",
            OpKind::Upsample2 { .. } => "upsample-by-2",
            OpKind::Scale(_) => "scalar-scale",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::ConcatLast => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn tape_id(&self) -> u64 {
        self.tape
    }
}

struct Node {
    value: Tensor,
    op: Option<OpKind>,
    inputs: [usize; 2],
    requires_grad: bool,
}

/// An append-only record of forward operations. Node order is topological.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes; handles issued before the reset become stale.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, [0, 0], true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, [0, 0], false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("stale tape handle");
        &self.nodes[v.index].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Option<OpKind>, inputs: [usize; 2], rg: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad: rg,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::StaleHandle {
                var_tape: v.tape,
                tape: self.id,
            });
        }
        Ok(())
    }

    /// Records `kind` applied to `operands` and returns the output handle.
    pub fn record(&mut self, kind: OpKind, operands: &[Var]) -> Result<Var> {
        if operands.len() != kind.arity() {
            return Err(Error::invalid(format!(
                "{kind} takes {} operands, got {}",
                kind.arity(),
                operands.len()
            )));
        }
        for &v in operands {
            self.check(v)?;
        }
        let a = &self.nodes[operands[0].index].value;
        let b = operands.get(1).map(|v| &self.nodes[v.index].value);
        let value = forward(&kind, a, b)?;
        let rg = operands.iter().any(|v| self.nodes[v.index].requires_grad);
        let inputs = [operands[0].index, operands.get(1).map_or(0, |v| v.index)];
        Ok(self.push(value, Some(kind), inputs, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Mul, &[a, b])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Sigmoid, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Square, &[a])
    }
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Abs, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Mean, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Sum, &[a])
    }
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::ConcatLast, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(OpKind::Scale(s), &[a])
    }

    /// A scalar node whose value is `value` and whose gradient with respect
    /// to each `(var, grad)` pair is exactly `grad`.
    pub fn scalar_with_gradients(&mut self, value: f64, parts: &[(Var, Tensor)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (v, g) in parts {
            let c = self.constant(g.clone());
            let prod = self.mul(*v, c)?;
            let s = self.sum(prod)?;
            acc = Some(match acc {
                Some(a) => self.add(a, s)?,
                None => s,
            });
        }
        match acc {
            None => Ok(self.constant(Tensor::scalar(value))),
            Some(a) => {
                let offset = value - self.value(a).item();
                let c = self.constant(Tensor::scalar(offset));
                self.add(a, c)
            }
        }
    }

    /// Reverse pass from a scalar `loss`. Every requested leaf gets exactly
    /// one entry; leaves the loss does not depend on get exact zeros.
    pub fn backward(&self, loss: Var, leaves: &[Var]) -> Result<GradMap> {
        self.check(loss)?;
        for &l in leaves {
            self.check(l)?;
        }
        let loss_val = &self.nodes[loss.index].value;
        if !loss_val.is_scalar() {
            return Err(Error::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(Tensor::full(loss_val.shape(), 1.0));

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let [ia, ib] = node.inputs;
            let a = &self.nodes[ia].value;
            let b = (op.arity() == 2).then(|| &self.nodes[ib].value);
            let (ga, gb) = adjoint(op, a, b, &node.value, &g);
            if self.nodes[ia].requires_grad {
                accumulate(&mut grads[ia], ga);
            }
            if let (Some(gb), true) = (gb, op.arity() == 2 && self.nodes[ib].requires_grad) {
                accumulate(&mut grads[ib], gb);
            }
            grads[idx] = Some(g);
        }

        let mut map = GradMap {
            tape: self.id,
            grads: HashMap::new(),
        };
        for &l in leaves {
            map.grads.entry(l.index).or_insert_with(|| {
                grads
                    .get_mut(l.index)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[l.index].value.shape()))
            });
        }
        Ok(map)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Gradients of one backward pass, keyed by leaf handle.
#[derive(Debug)]
pub struct GradMap {
    tape: u64,
    grads: HashMap<usize, Tensor>,
}

impl GradMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(&v.index)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.remove(&v.index)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_err(op: &OpKind, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `b` is either the same shape as `a` or one row broadcast over `a`'s batch.
fn broadcast_rows(op: &OpKind, a: &Tensor, b: &Tensor) -> Result<bool> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    let row_like = b.shape().len() == 1 || (b.shape().len() >= 2 && b.shape()[0] == 1);
    if a.shape().len() >= 2 && row_like && b.len() == a.cols() {
        Ok(true)
    } else {
        Err(shape_err(op, a, b))
    }
}

fn image_dims(op: &OpKind, a: &Tensor, h: usize, w: usize) -> Result<usize> {
    if a.shape().len() != 2 || a.cols() != h * w {
        return Err(Error::Shape {
            op: op.name(),
            lhs: a.shape().to_vec(),
            rhs: vec![h, w],
        });
    }
    Ok(a.rows())
}

fn forward(op: &OpKind, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let unary = |f: fn(f64) -> f64| a.map(f);
    Ok(match op {
        OpKind::MatMul => {
            let b = b.expect("binary");
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(op, a, b));
            }
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_parts(vec![n, m], matmul_raw(a.data(), b.data(), n, k, m))
        }
        OpKind::Add | OpKind::Sub => {
            let b = b.expect("binary");
            let bc = broadcast_rows(op, a, b)?;
            let sign = if *op == OpKind::Add { 1.0 } else { -1.0 };
            let c = b.len();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + sign * b.data()[if bc { i % c } else { i }])
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        OpKind::Mul => {
            let b = b.expect("binary");
            if a.shape() != b.shape() {
                return Err(shape_err(op, a, b));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        OpKind::Relu => unary(|x| if x > 0.0 { x } else { 0.0 }),
        OpKind::Sigmoid => unary(sigmoid),
        OpKind::Square => unary(|x| x * x),
        OpKind::Abs => unary(f64::abs),
        OpKind::Mean => Tensor::scalar(a.sum() / a.len() as f64),
        OpKind::Sum => Tensor::scalar(a.sum()),
        OpKind::Scale(s) => a.scale(*s),
        OpKind::ConcatLast => {
            let b = b.expect("binary");
            let (sa, sb) = (a.shape(), b.shape());
            if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
                return Err(shape_err(op, a, b));
            }
            let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
            let outer = a.len() / ca;
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..outer {
                data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
                data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
            }
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = ca + cb;
            Tensor::from_parts(shape, data)
        }
        OpKind::FixedConv2d {
            height,
            width,
            kernel,
        } => {
            let n = image_dims(op, a, *height, *width)?;
            conv2d_clamped(a.data(), n, *height, *width, kernel)
        }
        OpKind::Downsample2 { height, width } => {
            let n = image_dims(op, a, *height, *width)?;
            if height % 2 != 0 || width % 2 != 0 {
                return Err(Error::Shape {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: vec![*height, *width],
                });
            }
            let (h2, w2) = (height / 2, width / 2);
            let mut data = Vec::with_capacity(n * h2 * w2);
            for img in a.data().chunks(height * width) {
                for y in 0..h2 {
                    for x in 0..w2 {
                        data.push(img[2 * y * width + 2 * x]);
                    }
                }
            }
            Tensor::from_parts(vec![n, h2 * w2], data)
        }
        OpKind::Upsample2 { height, width } => {
            let n = image_dims(op, a, *height, *width)?;
            let (h2, w2) = (height * 2, width * 2);
            let mut data = Vec::with_capacity(n * h2 * w2);
            for img in a.data().chunks(height * width) {
                for y in 0..h2 {
                    for x in 0..w2 {
                        data.push(img[(y / 2) * width + x / 2]);
                    }
                }
            }
            Tensor::from_parts(vec![n, h2 * w2], data)
        }
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn conv2d_clamped(src: &[f64], n: usize, h: usize, w: usize, k: &Kernel) -> Tensor {
    let r = (k.size / 2) as isize;
    let mut out = vec![0.0; n * h * w];
    for b in 0..n {
        let img = &src[b * h * w..(b + 1) * h * w];
        let dst = &mut out[b * h * w..(b + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..k.size {
                    let sy = clamp_idx(y as isize + dy as isize - r, h);
                    for dx in 0..k.size {
                        let sx = clamp_idx(x as isize + dx as isize - r, w);
                        acc += k.weights[dy * k.size + dx] * img[sy * w + sx];
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    Tensor::from_parts(vec![n, h * w], out)
}

fn conv2d_clamped_adjoint(g: &[f64], n: usize, h: usize, w: usize, k: &Kernel) -> Vec<f64> {
    let r = (k.size / 2) as isize;
    let mut out = vec![0.0; n * h * w];
    for b in 0..n {
        let gi = &g[b * h * w..(b + 1) * h * w];
        let dst = &mut out[b * h * w..(b + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let gv = gi[y * w + x];
                for dy in 0..k.size {
                    let sy = clamp_idx(y as isize + dy as isize - r, h);
                    for dx in 0..k.size {
                        let sx = clamp_idx(x as isize + dx as isize - r, w);
                        dst[sy * w + sx] += k.weights[dy * k.size + dx] * gv;
                    }
                }
            }
        }
    }
    out
}

/// Vector-Jacobian products for one node.
fn adjoint(
    op: &OpKind,
    a: &Tensor,
    b: Option<&Tensor>,
    out: &Tensor,
    g: &Tensor,
) -> (Tensor, Option<Tensor>) {
    let like_a = |data: Vec<f64>| Tensor::from_parts(a.shape().to_vec(), data);
    let zip_a = |f: &dyn Fn(f64, f64) -> f64| {
        like_a(a.data().iter().zip(g.data()).map(|(&x, &d)| f(x, d)).collect())
    };
    match op {
        OpKind::MatMul => {
            let b = b.unwrap();
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = matmul_bt_raw(g.data(), b.data(), n, m, k);
            let gb = matmul_at_raw(a.data(), g.data(), n, k, m);
            (
                like_a(ga),
                Some(Tensor::from_parts(b.shape().to_vec(), gb)),
            )
        }
        OpKind::Add | OpKind::Sub => {
            let b = b.unwrap();
            let sign = if *op == OpKind::Add { 1.0 } else { -1.0 };
            let gb = if a.shape() == b.shape() {
                g.data().iter().map(|v| sign * v).collect()
            } else {
                let c = b.len();
                let mut acc = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (s, v) in acc.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc.into_iter().map(|v| sign * v).collect()
            };
            (g.clone(), Some(Tensor::from_parts(b.shape().to_vec(), gb)))
        }
        OpKind::Mul => {
            let b = b.unwrap();
            let ga = g.data().iter().zip(b.data()).map(|(d, y)| d * y).collect();
            let gb = g.data().iter().zip(a.data()).map(|(d, x)| d * x).collect();
            (
                like_a(ga),
                Some(Tensor::from_parts(b.shape().to_vec(), gb)),
            )
        }
        OpKind::Relu => (zip_a(&|x, d| if x > 0.0 { d } else { 0.0 }), None),
        OpKind::Sigmoid => {
            let ga = out
                .data()
                .iter()
                .zip(g.data())
                .map(|(y, d)| d * y * (1.0 - y))
                .collect();
            (like_a(ga), None)
        }
        OpKind::Square => (zip_a(&|x, d| 2.0 * x * d), None),
        OpKind::Abs => (
            zip_a(&|x, d| {
                if x > 0.0 {
                    d
                } else if x < 0.0 {
                    -d
                } else {
                    0.0
                }
            }),
            None,
        ),
        OpKind::Mean => (Tensor::full(a.shape(), g.item() / a.len() as f64), None),
        OpKind::Sum => (Tensor::full(a.shape(), g.item()), None),
        OpKind::Scale(s) => (g.scale(*s), None),
        OpKind::ConcatLast => {
            let b = b.unwrap();
            let ca = a.shape()[a.shape().len() - 1];
            let cb = b.shape()[b.shape().len() - 1];
            let mut ga = Vec::with_capacity(a.len());
            let mut gb = Vec::with_capacity(b.len());
            for row in g.data().chunks(ca + cb) {
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            (
                like_a(ga),
                Some(Tensor::from_parts(b.shape().to_vec(), gb)),
            )
        }
        OpKind::FixedConv2d {
            height,
            width,
            kernel,
        } => (
            like_a(conv2d_clamped_adjoint(
                g.data(),
                a.rows(),
                *height,
                *width,
                kernel,
            )),
            None,
        ),
        OpKind::Downsample2 { height, width } => {
            let (h2, w2) = (height / 2, width / 2);
            let mut ga = vec![0.0; a.len()];
            for (b, gi) in g.data().chunks(h2 * w2).enumerate() {
                let dst = &mut ga[b * height * width..(b + 1) * height * width];
                for y in 0..h2 {
                    for x in 0..w2 {
                        dst[2 * y * width + 2 * x] = gi[y * w2 + x];
                    }
                }
            }
            (like_a(ga), None)
        }
        OpKind::Upsample2 { height, width } => {
            let w2 = width * 2;
            let mut ga = vec![0.0; a.len()];
            for (b, gi) in g.data().chunks(4 * height * width).enumerate() {
                let dst = &mut ga[b * height * width..(b + 1) * height * width];
                for (p, v) in gi.iter().enumerate() {
                    let (y, x) = (p / w2, p % w2);
                    dst[(y / 2) * width + x / 2] += v;
                }
            }
            (like_a(ga), None)
        }
    }
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences. Returns the largest `|analytic - numeric| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, xv)?;
    let analytic = tape.backward(y, &[xv])?.take(xv).expect("requested leaf");

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone());
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / (a.abs() + 1e-8));
    }
    Ok(worst)
}
