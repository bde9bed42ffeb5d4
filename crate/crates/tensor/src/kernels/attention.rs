//! Attention kernels: channel-wise (per-channel `H×H` maps), standard
//! token attention (`HW×HW` map), and multi-head attention over token rows.

use crate::real::Real;

/// Records the buffers materialised by attention kernels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocCounter {
    peak_elements: usize,
    total_elements: usize,
    allocations: usize,
}

impl AllocCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc<T: Real>(&mut self, n: usize) -> Vec<T> {
        self.peak_elements = self.peak_elements.max(n);
        self.total_elements += n;
        self.allocations += 1;
        vec![T::zero(); n]
    }

    /// Element count of the largest single intermediate buffer.
    pub fn peak_elements(&self) -> usize {
        self.peak_elements
    }

    pub fn total_elements(&self) -> usize {
        self.total_elements
    }

    pub fn allocations(&self) -> usize {
        self.allocations
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// In-place max-subtracted softmax over each row of length `n`.
pub(crate) fn softmax_rows<T: Real>(buf: &mut [T], n: usize) {
    for row in buf.chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Channel-wise attention. For each channel `c`,
/// `A_c = softmax(q_c k_cᵀ / sqrt(w))` (`h×h`) and `out_c = A_c v_c`.
/// Returns `(out, attn)` with `attn` of `c·h·h` elements.
pub fn channelwise_attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    (c, h, w): (usize, usize, usize),
    counter: &mut AllocCounter,
) -> (Vec<T>, Vec<T>) {
    let scale = T::one() / T::lit(w as f64).sqrt();
    let mut attn: Vec<T> = counter.alloc(c * h * h);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        let a = &mut attn[ch * h * h..(ch + 1) * h * h];
        for i in 0..h {
            let qi = &q[base + i * w..base + (i + 1) * w];
            for j in 0..h {
                let kj = &k[base + j * w..base + (j + 1) * w];
                let dot: T = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum();
                a[i * h + j] = dot * scale;
            }
        }
        softmax_rows(a, h);
        for i in 0..h {
            let oi = &mut out[base + i * w..base + (i + 1) * w];
            for j in 0..h {
                let aij = a[i * h + j];
                let vj = &v[base + j * w..base + (j + 1) * w];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += aij * vv;
                }
            }
        }
    }
    (out, attn)
}

/// Returns `(grad_q, grad_k, grad_v)`.
pub(crate) fn channelwise_attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    attn: &[T],
    grad_out: &[T],
    (c, h, w): (usize, usize, usize),
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let scale = T::one() / T::lit(w as f64).sqrt();
    let mut gq = vec![T::zero(); q.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gv = vec![T::zero(); v.len()];
    let mut ds = vec![T::zero(); h * h];
    for ch in 0..c {
        let base = ch * h * w;
        let a = &attn[ch * h * h..(ch + 1) * h * h];
        for i in 0..h {
            let go_i = &grad_out[base + i * w..base + (i + 1) * w];
            let mut row_dot = T::zero();
            for j in 0..h {
                let vj = &v[base + j * w..base + (j + 1) * w];
                let da: T = go_i.iter().zip(vj).map(|(&g, &vv)| g * vv).sum();
                ds[i * h + j] = da;
                row_dot += a[i * h + j] * da;
                let aij = a[i * h + j];
                let gvj = &mut gv[base + j * w..base + (j + 1) * w];
                for (gvv, &g) in gvj.iter_mut().zip(go_i) {
                    *gvv += aij * g;
                }
            }
            for j in 0..h {
                ds[i * h + j] = a[i * h + j] * (ds[i * h + j] - row_dot) * scale;
            }
        }
        for i in 0..h {
            for j in 0..h {
                let d = ds[i * h + j];
                let kj = &k[base + j * w..base + (j + 1) * w];
                let gqi = &mut gq[base + i * w..base + (i + 1) * w];
                for (g, &kk) in gqi.iter_mut().zip(kj) {
                    *g += d * kk;
                }
                let qi = &q[base + i * w..base + (i + 1) * w];
                let gkj = &mut gk[base + j * w..base + (j + 1) * w];
                for (g, &qq) in gkj.iter_mut().zip(qi) {
                    *g += d * qq;
                }
            }
        }
    }
    (gq, gk, gv)
}

/// Standard attention over the `h·w` spatial tokens of `C×H×W` maps, each
/// token carrying a `c`-dim feature. Materialises the full `hw×hw` map.
pub fn standard_attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    (c, h, w): (usize, usize, usize),
    counter: &mut AllocCounter,
) -> Vec<T> {
    let n = h * w;
    let scale = T::one() / T::lit(c as f64).sqrt();
    let mut scores: Vec<T> = counter.alloc(n * n);
    for ch in 0..c {
        let qc = &q[ch * n..(ch + 1) * n];
        let kc = &k[ch * n..(ch + 1) * n];
        for (i, &qi) in qc.iter().enumerate() {
            let row = &mut scores[i * n..(i + 1) * n];
            for (s, &kj) in row.iter_mut().zip(kc) {
                *s += qi * kj;
            }
        }
    }
    scores.iter_mut().for_each(|s| *s *= scale);
    softmax_rows(&mut scores, n);
    let mut out = vec![T::zero(); c * n];
    for ch in 0..c {
        let vc = &v[ch * n..(ch + 1) * n];
        let oc = &mut out[ch * n..(ch + 1) * n];
        for (i, o) in oc.iter_mut().enumerate() {
            let row = &scores[i * n..(i + 1) * n];
            *o = row.iter().zip(vc).map(|(&a, &vv)| a * vv).sum();
        }
    }
    out
}

/// Multi-head attention over `n` tokens of width `d` split into `heads`
/// column groups. Returns `(out, attn)` with `attn` of `heads·n·n` elements.
pub(crate) fn mha_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
    counter: &mut AllocCounter,
) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut attn: Vec<T> = counter.alloc(heads * n * n);
    let mut out = vec![T::zero(); n * d];
    for hd in 0..heads {
        let off = hd * dh;
        let a = &mut attn[hd * n * n..(hd + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = T::zero();
                for t in 0..dh {
                    s += q[i * d + off + t] * k[j * d + off + t];
                }
                a[i * n + j] = s * scale;
            }
        }
        softmax_rows(a, n);
        for i in 0..n {
            for j in 0..n {
                let aij = a[i * n + j];
                for t in 0..dh {
                    out[i * d + off + t] += aij * v[j * d + off + t];
                }
            }
        }
    }
    (out, attn)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn mha_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    attn: &[T],
    grad_out: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut gq = vec![T::zero(); q.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gv = vec![T::zero(); v.len()];
    let mut ds = vec![T::zero(); n * n];
    for hd in 0..heads {
        let off = hd * dh;
        let a = &attn[hd * n * n..(hd + 1) * n * n];
        for i in 0..n {
            let mut row_dot = T::zero();
            for j in 0..n {
                let mut da = T::zero();
                for t in 0..dh {
                    let g = grad_out[i * d + off + t];
                    da += g * v[j * d + off + t];
                    gv[j * d + off + t] += a[i * n + j] * g;
                }
                ds[i * n + j] = da;
                row_dot += a[i * n + j] * da;
            }
            for j in 0..n {
                ds[i * n + j] = a[i * n + j] * (ds[i * n + j] - row_dot) * scale;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let s = ds[i * n + j];
                for t in 0..dh {
                    gq[i * d + off + t] += s * k[j * d + off + t];
                    gk[j * d + off + t] += s * q[i * d + off + t];
                }
            }
        }
    }
    (gq, gk, gv)
}
