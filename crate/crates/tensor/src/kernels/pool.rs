//! Pooling and resampling kernels on `C×H×W` buffers.

use crate::real::Real;

/// `[start, end)` source window of adaptive average pooling for output index `i`.
pub fn adaptive_window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = (i * input) / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

pub(crate) fn adaptive_avg_forward<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, w, ow);
                let mut acc = T::zero();
                for iy in y0..y1 {
                    for v in &xc[iy * w + x0..iy * w + x1] {
                        acc += *v;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = acc / T::lit(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

pub(crate) fn adaptive_avg_backward<T: Real>(
    grad_out: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let gc = &mut gx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, w, ow);
                let g = grad_out[(ch * oh + oy) * ow + ox]
                    / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for v in &mut gc[iy * w + x0..iy * w + x1] {
                        *v += g;
                    }
                }
            }
        }
    }
    gx
}

/// Half-pixel bilinear source taps `(i0, i1, frac)` for each output index.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub(crate) fn bilinear_forward<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let top = xc[y0 * w + x0] * (T::one() - fx) + xc[y0 * w + x1] * fx;
                let bot = xc[y1 * w + x0] * (T::one() - fx) + xc[y1 * w + x1] * fx;
                out[(ch * oh + oy) * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward<T: Real>(
    grad_out: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let gc = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let g = grad_out[(ch * oh + oy) * ow + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                gc[y0 * w + x0] += gt * (T::one() - fx);
                gc[y0 * w + x1] += gt * fx;
                gc[y1 * w + x0] += gb * (T::one() - fx);
                gc[y1 * w + x1] += gb * fx;
            }
        }
    }
    gx
}

/// 2×2 stride-2 max pooling; returns values and flat argmax indices into `x`.
pub(crate) fn maxpool2_forward<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
