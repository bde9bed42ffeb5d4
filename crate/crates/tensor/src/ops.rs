//! Forward ops. Every op validates its shape contract, computes the output
//! and records what its backward rule needs.

use crate::error::{contract_err, shape_err, Result, TensorError};
use crate::graph::{Binary, CustomOp, Graph, Op, Unary, Var, GELU_A, GELU_C};
use crate::kernels::attention::{self, softmax_rows};
use crate::kernels::conv::{self, conv_out_len, Conv2dSpec, ConvGeom, DeconvGeom};
use crate::kernels::elementwise::Broadcast;
use crate::kernels::pool;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Gelu,
    /// Softmax over the last axis.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resize {
    GlobalAvg,
    AdaptiveAvg { out_h: usize, out_w: usize },
    BilinearUp { out_h: usize, out_w: usize },
}

impl<T: Real> Graph<T> {
    fn chw(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        self.value(v)
            .chw()
            .ok_or_else(|| TensorError::Contract {
                op,
                msg: format!("expected C×H×W input, got dims {:?}", self.dims(v)),
            })
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        const OP: &str = "conv2d";
        let (cin, h, w) = self.chw(OP, x)?;
        let [cout, wcin, kh, kw] = self.dims(weight)[..] else {
            return contract_err(OP, format!("weight must be rank 4, got {:?}", self.dims(weight)));
        };
        if wcin != cin {
            return contract_err(OP, format!("input has {cin} channels, weight expects {wcin}"));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return contract_err(OP, "stride and dilation must be positive");
        }
        if let Some(b) = bias {
            if self.dims(b) != [cout] {
                return contract_err(OP, format!("bias dims {:?}, expected [{cout}]", self.dims(b)));
            }
        }
        let p = spec.padding;
        let oh = conv_out_len(h, kh, p.top, p.bottom, spec.dilation, spec.stride);
        let ow = conv_out_len(w, kw, p.left, p.right, spec.dilation, spec.stride);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return shape_err(OP, format!("non-positive output size for input {h}×{w}, kernel {kh}×{kw}"));
        };
        let geom = ConvGeom { cin, h, w, cout, kh, kw, oh, ow, spec };
        let out = conv::conv2d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        self.push(OP, Tensor::new(vec![cout, oh, ow], out)?, Op::Conv2d { x, w: weight, b: bias, geom })
    }

    /// Transposed convolution; weight is `C_in×C_out×k×k`. The configuration
    /// must exactly double both spatial dims.
    pub fn deconv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "deconv2d";
        let (cin, h, w) = self.chw(OP, x)?;
        let [wcin, cout, kh, kw] = self.dims(weight)[..] else {
            return contract_err(OP, format!("weight must be rank 4, got {:?}", self.dims(weight)));
        };
        if wcin != cin || kh != kw {
            return contract_err(OP, format!("weight {:?} incompatible with {cin} input channels", self.dims(weight)));
        }
        let out_len = |n: usize| ((n - 1) * stride + kh).checked_sub(2 * padding);
        let (Some(oh), Some(ow)) = (out_len(h), out_len(w)) else {
            return shape_err(OP, "non-positive output size");
        };
        if oh != 2 * h || ow != 2 * w {
            return shape_err(
                OP,
                format!("kernel {kh}, stride {stride}, padding {padding} maps {h}×{w} to {oh}×{ow}, not exactly doubled"),
            );
        }
        if let Some(b) = bias {
            if self.dims(b) != [cout] {
                return contract_err(OP, format!("bias dims {:?}, expected [{cout}]", self.dims(b)));
            }
        }
        let geom = DeconvGeom { cin, h, w, cout, k: kh, stride, pad: padding, oh, ow };
        let out = conv::deconv2d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        self.push(OP, Tensor::new(vec![cout, oh, ow], out)?, Op::Deconv2d { x, w: weight, b: bias, geom })
    }

    /// `weight · x + bias` for a rank-1 `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let [n] = self.dims(x)[..] else {
            return contract_err(OP, format!("x must be rank 1, got {:?}", self.dims(x)));
        };
        let [m, wn] = self.dims(weight)[..] else {
            return contract_err(OP, format!("weight must be rank 2, got {:?}", self.dims(weight)));
        };
        if wn != n {
            return contract_err(OP, format!("x has length {n}, weight expects {wn}"));
        }
        if let Some(b) = bias {
            if self.dims(b) != [m] {
                return contract_err(OP, format!("bias dims {:?}, expected [{m}]", self.dims(b)));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let out: Vec<T> = (0..m)
            .map(|i| {
                let dot: T = wv[i * n..(i + 1) * n].iter().zip(xv).map(|(&a, &b)| a * b).sum();
                dot + bias.map_or(T::zero(), |b| self.value(b).data()[i])
            })
            .collect();
        self.push(OP, Tensor::new(vec![m], out)?, Op::Linear { x, w: weight, b: bias })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let (&[m, k], &[k2, n]) = (self.dims(a), self.dims(b)) else {
            return contract_err(OP, "operands must be rank 2");
        };
        if k != k2 {
            return contract_err(OP, format!("inner dims differ: {k} vs {k2}"));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                for (o, &bb) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bb;
                }
            }
        }
        self.push(OP, Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, m, k, n })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let [rows, cols] = self.dims(x)[..] else {
            return contract_err("transpose", "operand must be rank 2");
        };
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xv[r * cols + c];
            }
        }
        self.push("transpose", Tensor::new(vec![cols, rows], out)?, Op::Transpose { x, rows, cols })
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(dims.to_vec())?;
        self.push("reshape", t, Op::Reshape { x })
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.unary("relu", x, Unary::Relu),
            Activation::Sigmoid => self.unary("sigmoid", x, Unary::Sigmoid),
            Activation::Gelu => self.unary("gelu", x, Unary::Gelu),
            Activation::Softmax => self.softmax(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, Unary::Sigmoid)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, Unary::Gelu)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary("ln", x, Unary::Ln)
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary("affine", x, Unary::Affine { scale, shift })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", x, Unary::Clamp { lo, hi })
    }

    fn unary(&mut self, name: &'static str, x: Var, kind: Unary) -> Result<Var> {
        let out = self.value(x).map(|v| unary_forward(kind, v));
        self.push(name, out, Op::Unary { x, kind })
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t.dims().last().expect("rank >= 1");
        let mut out = t.clone();
        softmax_rows(out.data_mut(), n);
        self.push("softmax", out, Op::Softmax { x, n })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Binary::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Binary::Div)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let Some(plan) = Broadcast::new(self.dims(a), self.dims(b)) else {
            return contract_err(
                name,
                format!("dims {:?} and {:?} do not broadcast", self.dims(a), self.dims(b)),
            );
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); plan.numel()];
        match kind {
            Binary::Add => plan.for_each(|o, ia, ib| out[o] = av[ia] + bv[ib]),
            Binary::Mul => plan.for_each(|o, ia, ib| out[o] = av[ia] * bv[ib]),
            Binary::Div => plan.for_each(|o, ia, ib| out[o] = av[ia] / bv[ib]),
        }
        let t = Tensor::new(plan.out_dims.clone(), out)?;
        self.push(name, t, Op::Binary { a, b, kind, plan })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).mean();
        self.push("mean", Tensor::scalar(s), Op::Mean { x })
    }

    pub fn resize(&mut self, x: Var, mode: Resize) -> Result<Var> {
        match mode {
            Resize::GlobalAvg => self.global_avg(x),
            Resize::AdaptiveAvg { out_h, out_w } => self.adaptive_avg(x, out_h, out_w),
            Resize::BilinearUp { out_h, out_w } => self.bilinear_up(x, out_h, out_w),
        }
    }

    /// `C×H×W → C×1×1`.
    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        let chw @ (c, h, w) = self.chw("global_avg", x)?;
        let xv = self.value(x).data();
        let area = T::lit((h * w) as f64);
        let out = (0..c).map(|ch| xv[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() / area).collect();
        self.push("global_avg", Tensor::new(vec![c, 1, 1], out)?, Op::GlobalAvg { x, chw })
    }

    pub fn adaptive_avg(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "adaptive_avg";
        let chw @ (c, h, w) = self.chw(OP, x)?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return shape_err(OP, format!("cannot pool {h}×{w} to {out_h}×{out_w}"));
        }
        let out = pool::adaptive_avg_forward(self.value(x).data(), chw, (out_h, out_w));
        self.push(OP, Tensor::new(vec![c, out_h, out_w], out)?, Op::AdaptiveAvg { x, chw, out: (out_h, out_w) })
    }

    /// Half-pixel bilinear upsampling (`align_corners = false`).
    pub fn bilinear_up(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "bilinear_up";
        let chw @ (c, h, w) = self.chw(OP, x)?;
        if out_h < h || out_w < w {
            return shape_err(OP, format!("cannot upsample {h}×{w} to {out_h}×{out_w}"));
        }
        let out = pool::bilinear_forward(self.value(x).data(), chw, (out_h, out_w));
        self.push(OP, Tensor::new(vec![c, out_h, out_w], out)?, Op::Bilinear { x, chw, out: (out_h, out_w) })
    }

    /// 2×2 max pooling with stride 2; H and W must be even.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "max_pool2";
        let chw @ (c, h, w) = self.chw(OP, x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(OP, format!("spatial dims {h}×{w} must be even"));
        }
        let (out, argmax) = pool::maxpool2_forward(self.value(x).data(), chw);
        self.push(OP, Tensor::new(vec![c, h / 2, w / 2], out)?, Op::MaxPool2 { x, argmax })
    }

    /// Mean over channels, `C×H×W → 1×H×W`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let chw @ (c, h, w) = self.chw("channel_mean", x)?;
        let xv = self.value(x).data();
        let plane = h * w;
        let inv = T::one() / T::lit(c as f64);
        let out = (0..plane)
            .map(|p| (0..c).map(|ch| xv[ch * plane + p]).sum::<T>() * inv)
            .collect();
        self.push("channel_mean", Tensor::new(vec![1, h, w], out)?, Op::ChannelMean { x, chw })
    }

    /// Max over channels, `C×H×W → 1×H×W`; ties go to the lowest channel.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw("channel_max", x)?;
        let xv = self.value(x).data();
        let plane = h * w;
        let mut out = Vec::with_capacity(plane);
        let mut argmax = Vec::with_capacity(plane);
        for p in 0..plane {
            let mut best = p;
            for ch in 1..c {
                if xv[ch * plane + p] > xv[best] {
                    best = ch * plane + p;
                }
            }
            out.push(xv[best]);
            argmax.push(best);
        }
        self.push("channel_max", Tensor::new(vec![1, h, w], out)?, Op::ChannelMax { x, argmax })
    }

    /// Concatenation along axis 0. All trailing dims must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        const OP: &str = "concat";
        let Some(&first) = inputs.first() else {
            return contract_err(OP, "no inputs");
        };
        let tail = self.dims(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let d = self.dims(v);
            if d.len() != tail.len() + 1 || d[1..] != tail[..] {
                return contract_err(OP, format!("dims {:?} incompatible with trailing {tail:?}", d));
            }
            lead += d[0];
            data.extend_from_slice(self.value(v).data());
        }
        let mut dims = vec![lead];
        dims.extend(tail);
        self.push(OP, Tensor::new(dims, data)?, Op::Concat { inputs: inputs.to_vec() })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        const OP: &str = "layer_norm";
        let d = *self.dims(x).last().expect("rank >= 1");
        if self.dims(gamma) != [d] || self.dims(beta) != [d] {
            return contract_err(OP, format!("gamma/beta must be [{d}]"));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let inv_d = T::one() / T::lit(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::lit(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mu) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let dims = self.dims(x).to_vec();
        self.push(OP, Tensor::new(dims, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd, d })
    }

    /// Per-channel attention: `A_c = softmax(q_c·k_cᵀ/√W)`, `out_c = A_c·v_c`.
    /// Requires square `H = W` maps.
    pub fn channelwise_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        const OP: &str = "channelwise_attention";
        let chw @ (c, h, w) = self.chw(OP, q)?;
        if self.dims(k) != self.dims(q) || self.dims(v) != self.dims(q) {
            return contract_err(OP, "q, k and v must share dims");
        }
        if h != w {
            return Err(TensorError::UnsupportedShape {
                op: OP,
                msg: format!("requires square maps, got {h}×{w}"),
            });
        }
        let (out, attn) = attention::channelwise_attention_forward(
            self.nodes[q.0].value.data(),
            self.nodes[k.0].value.data(),
            self.nodes[v.0].value.data(),
            chw,
            &mut self.counter,
        );
        self.push(OP, Tensor::new(vec![c, h, w], out)?, Op::ChannelAttention { q, k, v, attn, chw })
    }

    /// Multi-head scaled dot-product attention over `N×D` token matrices.
    pub fn multi_head_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        const OP: &str = "multi_head_attention";
        let [n, d] = self.dims(q)[..] else {
            return contract_err(OP, "q must be N×D");
        };
        if self.dims(k) != [n, d] || self.dims(v) != [n, d] {
            return contract_err(OP, "q, k and v must share dims");
        }
        if heads == 0 || d % heads != 0 {
            return contract_err(OP, format!("width {d} not divisible into {heads} heads"));
        }
        let (out, attn) = attention::mha_forward(
            self.nodes[q.0].value.data(),
            self.nodes[k.0].value.data(),
            self.nodes[v.0].value.data(),
            n,
            d,
            heads,
            &mut self.counter,
        );
        self.push(OP, Tensor::new(vec![n, d], out)?, Op::MultiHeadAttention { q, k, v, attn, n, d, heads })
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Result<Var> {
        let name = op.name();
        let out = {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&ins)?
        };
        self.push(name, out, Op::Custom { inputs: inputs.to_vec(), op })
    }
}

fn unary_forward<T: Real>(kind: Unary, x: T) -> T {
    match kind {
        Unary::Relu => x.max(T::zero()),
        Unary::Sigmoid => {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        }
        Unary::Gelu => {
            let t = (T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x)).tanh();
            T::lit(0.5) * x * (T::one() + t)
        }
        Unary::Ln => x.ln(),
        Unary::Affine { scale, shift } => T::lit(scale) * x + T::lit(shift),
        Unary::Clamp { lo, hi } => x.max(T::lit(lo)).min(T::lit(hi)),
    }
}
