use thiserror::Error;

use super::conv::ConvSaved;
use super::gru::GruSaved;
use crate::sampling::SamplingError;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("binary cross-entropy target {0} outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

pub(crate) fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear { x: Var, w: Var, b: Var },
    Gather { input: Var, index: Vec<usize> },
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    Strip { input: Var },
    L1 { pred: Var, target: Tensor },
    Bce { logits: Var, target: Tensor },
    GridConv(Box<ConvSaved>),
    GruCell(Box<GruSaved>),
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Eagerly evaluated computation record for reverse-mode differentiation.
///
/// Values are immutable once recorded. A tape belongs to one thread; parallel
/// training replicas each build their own.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

pub(crate) struct Ctx<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Ctx<'_> {
    pub(crate) fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn grad_mut(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}


impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are kept only for leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|a| f(*a)).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(out, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, Op::Scale(x, s), |a| a * s)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid_scalar)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    /// `x [N, D] · wᵀ + b` with `w [O, D]`, `b [O]`. A 1-D `x` is treated as one row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || self.shape(b) != [ws[0]] {
            return Err(mismatch("linear", &ws, self.shape(b)));
        }
        let (o, d) = (ws[0], ws[1]);
        let (n, xd) = match xs.as_slice() {
            [d] => (1, *d),
            [n, d] => (*n, *d),
            _ => return Err(mismatch("linear", &[0, d], &xs)),
        };
        if xd != d {
            return Err(mismatch("linear", &[n, d], &xs));
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * o);
        for row in xv.chunks(d) {
            for (k, wr) in wv.chunks(d).enumerate() {
                out.push(bv[k] + dot(row, wr));
            }
        }
        let shape = if xs.len() == 1 { vec![o] } else { vec![n, o] };
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// `out[i] = x.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let src = self.value(x).data();
        if let Some(bad) = index.iter().find(|i| **i >= src.len()) {
            return Err(mismatch("gather", &[src.len()], &[*bad]));
        }
        let data = index.iter().map(|i| src[*i]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Gather { input: x, index }, &[x]))
    }

    /// Row `t` of a 2-D tensor as a vector.
    pub fn row(&mut self, x: Var, t: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || t >= shape[0] {
            return Err(mismatch("row", &[t + 1, 0], &shape));
        }
        let f = shape[1];
        self.gather(x, (t * f..(t + 1) * f).collect(), vec![f])
    }

    /// Flat concatenation of all inputs, reshaped to `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Concatenates `[T, F_i]` inputs along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let t = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != t {
                return Err(mismatch("concat_cols", &[t, 0], s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(t * total);
        for row in 0..t {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[row * w..(row + 1) * w]);
            }
        }
        let out = Tensor::new(vec![t, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Folds the height of a `[C, h, w]` feature map into channels and resamples
    /// its width to `target_w` columns, producing a `[target_w, h·C]` sequence.
    ///
    /// Feature `y·C + c` holds channel `c` of row `y`. Wider maps are averaged in
    /// groups of `w / target_w` columns, narrower ones repeat each column.
    pub fn strip(&mut self, x: Var, target_w: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let [c, h, w] = shape[..] else {
            return Err(mismatch("strip", &[0, 0, 0], &shape));
        };
        if !(w % target_w == 0 || target_w % w == 0) {
            return Err(mismatch("strip", &[c, h, target_w], &shape));
        }
        let src = self.value(x).data();
        let feats = h * c;
        let mut data = vec![0.0; target_w * feats];
        for t in 0..target_w {
            for y in 0..h {
                for ch in 0..c {
                    let base = (ch * h + y) * w;
                    let v = if w >= target_w {
                        let k = w / target_w;
                        src[base + t * k..base + (t + 1) * k].iter().sum::<f64>() / k as f64
                    } else {
                        src[base + t / (target_w / w)]
                    };
                    data[t * feats + y * c + ch] = v;
                }
            }
        }
        let out = Tensor::new(vec![target_w, feats], data)?;
        Ok(self.push(out, Op::Strip { input: x }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut ctx = Ctx {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            backward_node(node, &g, &mut ctx);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn backward_node(node: &Node, g: &[f64], ctx: &mut Ctx<'_>) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(ga) = ctx.grad_mut(v) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (ctx.value(*a).data().to_vec(), ctx.value(*b).data().to_vec());
            if let Some(ga) = ctx.grad_mut(*a) {
                for ((x, gy), y) in ga.iter_mut().zip(g).zip(&vb) {
                    *x += gy * y;
                }
            }
            if let Some(gb) = ctx.grad_mut(*b) {
                for ((x, gy), y) in gb.iter_mut().zip(g).zip(&va) {
                    *x += gy * y;
                }
            }
        }
        Op::Scale(x, s) => {
            if let Some(gx) = ctx.grad_mut(*x) {
                gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * s);
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = ctx.grad_mut(*x) {
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        Op::Relu(x) => {
            if let Some(gx) = ctx.grad_mut(*x) {
                for ((a, gy), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *a += gy;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(gx) = ctx.grad_mut(*x) {
                for ((a, gy), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *a += gy * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(gx) = ctx.grad_mut(*x) {
                for ((a, gy), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *a += gy * (1.0 - y * y);
                }
            }
        }
        Op::Linear { x, w, b } => {
            let d = ctx.value(*w).shape()[1];
            let o = ctx.value(*w).shape()[0];
            if let Some(gb) = ctx.grad_mut(*b) {
                for row in g.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
            }
            if ctx.wants(*w) {
                let xv = ctx.value(*x).data().to_vec();
                let gw = ctx.grad_mut(*w).unwrap();
                for (grow, xrow) in g.chunks(o).zip(xv.chunks(d)) {
                    for (k, gk) in grow.iter().enumerate() {
                        let dst = &mut gw[k * d..(k + 1) * d];
                        dst.iter_mut().zip(xrow).for_each(|(a, xv)| *a += gk * xv);
                    }
                }
            }
            if ctx.wants(*x) {
                let wv = ctx.value(*w).data().to_vec();
                let gx = ctx.grad_mut(*x).unwrap();
                for (grow, dst) in g.chunks(o).zip(gx.chunks_mut(d)) {
                    for (k, gk) in grow.iter().enumerate() {
                        let wr = &wv[k * d..(k + 1) * d];
                        dst.iter_mut().zip(wr).for_each(|(a, wv)| *a += gk * wv);
                    }
                }
            }
        }
        Op::Gather { input, index } => {
            if let Some(gx) = ctx.grad_mut(*input) {
                for (i, gy) in index.iter().zip(g) {
                    gx[*i] += gy;
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for p in parts {
                let n = ctx.value(*p).len();
                if let Some(gp) = ctx.grad_mut(*p) {
                    gp.iter_mut().zip(&g[off..off + n]).for_each(|(a, b)| *a += b);
                }
                off += n;
            }
        }
        Op::ConcatCols(parts) => {
            let t = out.shape()[0];
            let total = out.shape()[1];
            let mut off = 0;
            for p in parts {
                let w = ctx.value(*p).shape()[1];
                if let Some(gp) = ctx.grad_mut(*p) {
                    for row in 0..t {
                        let src = &g[row * total + off..row * total + off + w];
                        gp[row * w..(row + 1) * w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                off += w;
            }
        }
        Op::Strip { input } => {
            let shape = ctx.value(*input).shape().to_vec();
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let target_w = out.shape()[0];
            let feats = h * c;
            if let Some(gx) = ctx.grad_mut(*input) {
                for t in 0..target_w {
                    for y in 0..h {
                        for ch in 0..c {
                            let gy = g[t * feats + y * c + ch];
                            let base = (ch * h + y) * w;
                            if w >= target_w {
                                let k = w / target_w;
                                let share = gy / k as f64;
                                gx[base + t * k..base + (t + 1) * k]
                                    .iter_mut()
                                    .for_each(|a| *a += share);
                            } else {
                                gx[base + t / (target_w / w)] += gy;
                            }
                        }
                    }
                }
            }
        }
        Op::L1 { pred, target } => super::loss::l1_backward(*pred, target, g[0], ctx),
        Op::Bce { logits, target } => super::loss::bce_backward(*logits, target, g[0], ctx),
        Op::GridConv(saved) => saved.backward(g, ctx),
        Op::GruCell(saved) => saved.backward(g, ctx),
    }
}
