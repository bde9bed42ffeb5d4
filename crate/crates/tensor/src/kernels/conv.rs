//! Direct convolution kernels on `C×H×W` buffers.

use crate::real::Real;

/// Per-side zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self { top: p, bottom: p, left: p, right: p }
    }

    /// `ph` rows above and below, `pw` columns left and right.
    pub fn symmetric(ph: usize, pw: usize) -> Self {
        Self { top: ph, bottom: ph, left: pw, right: pw }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, dilation: 1, padding: Padding::default() }
    }
}

impl Conv2dSpec {
    pub fn padded(p: usize) -> Self {
        Self { padding: Padding::uniform(p), ..Self::default() }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }
}

/// Output length along one axis, `None` when non-positive.
pub fn conv_out_len(
    input: usize,
    kernel: usize,
    pad_a: usize,
    pad_b: usize,
    dilation: usize,
    stride: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + pad_a + pad_b;
    if padded < span {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: Conv2dSpec,
}

impl ConvGeom {
    /// Range of output columns whose input column `ox*s + kx*d - left` is in bounds.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let off = (kx * self.spec.dilation) as isize - self.spec.padding.left as isize;
        // need 0 <= ox*s + off < w
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = {
            let lim = self.w as isize - off; // ox*s < lim
            if lim <= 0 {
                0
            } else {
                (lim + s - 1) / s
            }
        };
        let hi = hi_excl.min(self.ow as isize).max(lo);
        (lo as usize, hi as usize)
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.spec.stride + ky * self.spec.dilation) as isize
            - self.spec.padding.top as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    fn input_col(&self, ox: usize, kx: usize) -> usize {
        ox * self.spec.stride + kx * self.spec.dilation - self.spec.padding.left
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.cout * plane];
    for co in 0..g.cout {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            out_c.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.cin {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = weight[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    let (lo, hi) = g.ox_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let row_in = &x_c[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut out_c[oy * g.ow..(oy + 1) * g.ow];
                        if g.spec.stride == 1 {
                            let ix0 = g.input_col(lo, kx);
                            for (o, &i) in row_out[lo..hi].iter_mut().zip(&row_in[ix0..ix0 + hi - lo]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in lo..hi {
                                row_out[ox] += wv * row_in[g.input_col(ox, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.oh * g.ow;
    let mut gx = vec![T::zero(); g.cin * g.h * g.w];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.cout];
    for co in 0..g.cout {
        let go_c = &grad_out[co * plane..(co + 1) * plane];
        gb[co] = go_c.iter().copied().sum();
        for ci in 0..g.cin {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let gx_c = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    let wv = weight[widx];
                    let (lo, hi) = g.ox_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let row_go = &go_c[oy * g.ow..(oy + 1) * g.ow];
                        if g.spec.stride == 1 {
                            let ix0 = g.input_col(lo, kx);
                            let row_in = &x_c[iy * g.w + ix0..iy * g.w + ix0 + hi - lo];
                            for (&go, &xi) in row_go[lo..hi].iter().zip(row_in) {
                                acc += go * xi;
                            }
                            let row_gx = &mut gx_c[iy * g.w + ix0..iy * g.w + ix0 + hi - lo];
                            for (gxi, &go) in row_gx.iter_mut().zip(&row_go[lo..hi]) {
                                *gxi += wv * go;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = g.input_col(ox, kx);
                                acc += row_go[ox] * x_c[iy * g.w + ix];
                                gx_c[iy * g.w + ix] += wv * row_go[ox];
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Geometry of a transposed convolution; weight layout is `C_in×C_out×kh×kw`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DeconvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl DeconvGeom {
    fn target(&self, i: usize, k: usize, len: usize) -> Option<usize> {
        let o = (i * self.stride + k) as isize - self.pad as isize;
        (o >= 0 && (o as usize) < len).then_some(o as usize)
    }
}

pub(crate) fn deconv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &DeconvGeom,
) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.cout * plane];
    for co in 0..g.cout {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            out_c.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.cin {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = weight[((ci * g.cout + co) * g.k + ky) * g.k + kx];
                    for iy in 0..g.h {
                        let Some(oy) = g.target(iy, ky, g.oh) else { continue };
                        for ix in 0..g.w {
                            if let Some(ox) = g.target(ix, kx, g.ow) {
                                out_c[oy * g.ow + ox] += wv * x_c[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn deconv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &DeconvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.oh * g.ow;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.cout];
    for co in 0..g.cout {
        let go_c = &grad_out[co * plane..(co + 1) * plane];
        gb[co] = go_c.iter().copied().sum();
        for ci in 0..g.cin {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let gx_c = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let widx = ((ci * g.cout + co) * g.k + ky) * g.k + kx;
                    let wv = weight[widx];
                    let mut acc = T::zero();
                    for iy in 0..g.h {
                        let Some(oy) = g.target(iy, ky, g.oh) else { continue };
                        for ix in 0..g.w {
                            if let Some(ox) = g.target(ix, kx, g.ow) {
                                let go = go_c[oy * g.ow + ox];
                                acc += go * x_c[iy * g.w + ix];
                                gx_c[iy * g.w + ix] += wv * go;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}
