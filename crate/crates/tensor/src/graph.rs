//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in execution order. Each node owns its
//! output value, the data saved for its backward rule and, after
//! [`Graph::backward`], an optional gradient. Leaf gradients accumulate
//! across repeated `backward` calls until [`Graph::zero_grad`];
//! intermediate gradients are recomputed on every call.

use crate::error::{contract_err, Result, TensorError};
use crate::kernels::attention::{self, AllocCounter};
use crate::kernels::conv::{self, ConvGeom, DeconvGeom};
use crate::kernels::elementwise::Broadcast;
use crate::kernels::pool;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-defined differentiable op.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    /// Gradients with respect to each input, in order.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Vec<Tensor<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Relu,
    Sigmoid,
    Gelu,
    Ln,
    Affine { scale: f64, shift: f64 },
    Clamp { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Mul,
    Div,
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Deconv2d { x: Var, w: Var, b: Option<Var>, geom: DeconvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape { x: Var },
    Unary { x: Var, kind: Unary },
    Softmax { x: Var, n: usize },
    Binary { a: Var, b: Var, kind: Binary, plan: Broadcast },
    Sum { x: Var },
    Mean { x: Var },
    GlobalAvg { x: Var, chw: (usize, usize, usize) },
    AdaptiveAvg { x: Var, chw: (usize, usize, usize), out: (usize, usize) },
    Bilinear { x: Var, chw: (usize, usize, usize), out: (usize, usize) },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    ChannelMean { x: Var, chw: (usize, usize, usize) },
    ChannelMax { x: Var, argmax: Vec<usize> },
    Concat { inputs: Vec<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T>, d: usize },
    ChannelAttention { q: Var, k: Var, v: Var, attn: Vec<T>, chw: (usize, usize, usize) },
    MultiHeadAttention { q: Var, k: Var, v: Var, attn: Vec<T>, n: usize, d: usize, heads: usize },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub grad: Option<Tensor<T>>,
}

/// Ordered record of executed ops.
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) counter: AllocCounter,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), counter: AllocCounter::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Counter of the attention buffers materialised in this graph.
    pub fn alloc_counter(&self) -> &AllocCounter {
        &self.counter
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Populates `∂loss/∂leaf` for every leaf created with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return contract_err(
                "backward",
                format!("loss must be scalar, got dims {:?}", self.dims(loss)),
            );
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        let seed = Tensor::full(self.dims(loss).to_vec(), T::one());
        self.accumulate(loss, seed);
        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) || !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else { continue };
            let contributions = self.node_backward(idx, &g);
            for (v, t) in contributions {
                if self.nodes[v.0].requires_grad {
                    self.accumulate(v, t);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, t: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        debug_assert_eq!(node.value.dims(), t.dims());
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(t.data()) {
                    *a += *b;
                }
            }
            None => node.grad = Some(t),
        }
    }

    fn node_backward(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<T>| Tensor::new(self.dims(v).to_vec(), data).expect("grad dims");
        let gd = g.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = conv::conv2d_backward(val(*x).data(), val(*w).data(), gd, geom);
                let mut out = vec![(*x, like(*x, gx)), (*w, like(*w, gw))];
                if let Some(b) = b {
                    out.push((*b, like(*b, gb)));
                }
                out
            }
            Op::Deconv2d { x, w, b, geom } => {
                let (gx, gw, gb) = conv::deconv2d_backward(val(*x).data(), val(*w).data(), gd, geom);
                let mut out = vec![(*x, like(*x, gx)), (*w, like(*w, gw))];
                if let Some(b) = b {
                    out.push((*b, like(*b, gb)));
                }
                out
            }
            Op::Linear { x, w, b } => {
                let xv = val(*x).data();
                let wv = val(*w).data();
                let (m, n) = (gd.len(), xv.len());
                let mut gx = vec![T::zero(); n];
                let mut gw = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[j] += wv[i * n + j] * gd[i];
                        gw[i * n + j] = gd[i] * xv[j];
                    }
                }
                let mut out = vec![(*x, like(*x, gx)), (*w, like(*w, gw))];
                if let Some(b) = b {
                    out.push((*b, like(*b, gd.to_vec())));
                }
                out
            }
            Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let (m, k, n) = (*m, *k, *n);
                let mut ga = vec![T::zero(); m * k];
                let mut gb = vec![T::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = T::zero();
                        for j in 0..n {
                            acc += gd[i * n + j] * bv[p * n + j];
                            gb[p * n + j] += av[i * k + p] * gd[i * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Transpose { x, rows, cols } => {
                let mut gx = vec![T::zero(); rows * cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        gx[r * cols + c] = gd[c * rows + r];
                    }
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Reshape { x } => vec![(*x, like(*x, gd.to_vec()))],
            Op::Unary { x, kind } => {
                let xv = val(*x).data();
                let yv = node.value.data();
                let gx = xv
                    .iter()
                    .zip(yv)
                    .zip(gd)
                    .map(|((&xi, &yi), &gi)| gi * unary_derivative(*kind, xi, yi))
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Softmax { x, n } => {
                let yv = node.value.data();
                let mut gx = vec![T::zero(); yv.len()];
                for ((gxr, yr), gr) in gx.chunks_mut(*n).zip(yv.chunks(*n)).zip(gd.chunks(*n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for ((o, &y), &gg) in gxr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (gg - dot);
                    }
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Binary { a, b, kind, plan } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                match kind {
                    Binary::Add => plan.for_each(|o, ia, ib| {
                        ga[ia] += gd[o];
                        gb[ib] += gd[o];
                    }),
                    Binary::Mul => plan.for_each(|o, ia, ib| {
                        ga[ia] += gd[o] * bv[ib];
                        gb[ib] += gd[o] * av[ia];
                    }),
                    Binary::Div => plan.for_each(|o, ia, ib| {
                        ga[ia] += gd[o] / bv[ib];
                        gb[ib] -= gd[o] * av[ia] / (bv[ib] * bv[ib]);
                    }),
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Sum { x } => {
                let n = val(*x).numel();
                vec![(*x, like(*x, vec![gd[0]; n]))]
            }
            Op::Mean { x } => {
                let n = val(*x).numel();
                vec![(*x, like(*x, vec![gd[0] / T::lit(n as f64); n]))]
            }
            Op::GlobalAvg { x, chw: (c, h, w) } => {
                let area = T::lit((h * w) as f64);
                let mut gx = Vec::with_capacity(c * h * w);
                for &gc in gd.iter().take(*c) {
                    gx.extend(std::iter::repeat_n(gc / area, h * w));
                }
                vec![(*x, like(*x, gx))]
            }
            Op::AdaptiveAvg { x, chw, out } => {
                vec![(*x, like(*x, pool::adaptive_avg_backward(gd, *chw, *out)))]
            }
            Op::Bilinear { x, chw, out } => {
                vec![(*x, like(*x, pool::bilinear_backward(gd, *chw, *out)))]
            }
            Op::MaxPool2 { x, argmax } | Op::ChannelMax { x, argmax } => {
                let mut gx = vec![T::zero(); val(*x).numel()];
                for (&src, &gg) in argmax.iter().zip(gd) {
                    gx[src] += gg;
                }
                vec![(*x, like(*x, gx))]
            }
            Op::ChannelMean { x, chw: (c, h, w) } => {
                let inv = T::one() / T::lit(*c as f64);
                let plane = h * w;
                let mut gx = vec![T::zero(); c * plane];
                for ch in 0..*c {
                    for (o, &gg) in gx[ch * plane..(ch + 1) * plane].iter_mut().zip(gd) {
                        *o = gg * inv;
                    }
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Concat { inputs } => {
                let mut off = 0;
                inputs
                    .iter()
                    .map(|&v| {
                        let n = val(v).numel();
                        let t = like(v, gd[off..off + n].to_vec());
                        off += n;
                        (v, t)
                    })
                    .collect()
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd, d } => {
                let d = *d;
                let gam = val(*gamma).data();
                let mut gx = vec![T::zero(); xhat.len()];
                let mut gg = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                let inv_d = T::one() / T::lit(d as f64);
                for (r, ((gxr, xr), gr)) in
                    gx.chunks_mut(d).zip(xhat.chunks(d)).zip(gd.chunks(d)).enumerate()
                {
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xr[j];
                        gg[j] += gr[j] * xr[j];
                        gbeta[j] += gr[j];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        gxr[j] = rstd[r] * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
                    }
                }
                vec![(*x, like(*x, gx)), (*gamma, like(*gamma, gg)), (*beta, like(*beta, gbeta))]
            }
            Op::ChannelAttention { q, k, v, attn, chw } => {
                let (gq, gk, gv) = attention::channelwise_attention_backward(
                    val(*q).data(),
                    val(*k).data(),
                    val(*v).data(),
                    attn,
                    gd,
                    *chw,
                );
                vec![(*q, like(*q, gq)), (*k, like(*k, gk)), (*v, like(*v, gv))]
            }
            Op::MultiHeadAttention { q, k, v, attn, n, d, heads } => {
                let (gq, gk, gv) = attention::mha_backward(
                    val(*q).data(),
                    val(*k).data(),
                    val(*v).data(),
                    attn,
                    gd,
                    *n,
                    *d,
                    *heads,
                );
                vec![(*q, like(*q, gq)), (*k, like(*k, gk)), (*v, like(*v, gv))]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&ins, &node.value, g);
                inputs.iter().copied().zip(grads).collect()
            }
        }
    }
}

pub(crate) fn unary_derivative<T: Real>(kind: Unary, x: T, y: T) -> T {
    match kind {
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Gelu => {
            let c = T::lit(GELU_C);
            let a = T::lit(GELU_A);
            let t = (c * (x + a * x * x * x)).tanh();
            T::lit(0.5) * (T::one() + t)
                + T::lit(0.5) * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
        }
        Unary::Ln => T::one() / x,
        Unary::Affine { scale, .. } => T::lit(scale),
        Unary::Clamp { lo, hi } => {
            if x < T::lit(lo) || x > T::lit(hi) {
                T::zero()
            } else {
                T::one()
            }
        }
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

fn op_inputs<T: Real>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d { x, w, b, .. } | Op::Deconv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
            let mut v = vec![*x, *w];
            v.extend(b.iter().copied());
            v
        }
        Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } => vec![*a, *b],
        Op::Transpose { x, .. }
        | Op::Reshape { x }
        | Op::Unary { x, .. }
        | Op::Softmax { x, .. }
        | Op::Sum { x }
        | Op::Mean { x }
        | Op::GlobalAvg { x, .. }
        | Op::AdaptiveAvg { x, .. }
        | Op::Bilinear { x, .. }
        | Op::MaxPool2 { x, .. }
        | Op::ChannelMean { x, .. }
        | Op::ChannelMax { x, .. } => vec![*x],
        Op::Concat { inputs } | Op::Custom { inputs, .. } => inputs.clone(),
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::ChannelAttention { q, k, v, .. } | Op::MultiHeadAttention { q, k, v, .. } => {
            vec![*q, *k, *v]
        }
    }
}
