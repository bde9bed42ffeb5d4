#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscnet_tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink at the origin.
pub fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Distinct values spaced by at least 1e-2, in random order.
pub fn distinct(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(dims.to_vec(), vals).unwrap()
}

/// Naive sliding-window convolution.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    dilation: usize,
    pad: (usize, usize, usize, usize),
) -> Vec<Vec<Vec<f64>>> {
    let (cin, h, wd) = x.chw().unwrap();
    let (cout, kh, kw) = (w.dims()[0], w.dims()[2], w.dims()[3]);
    let (pt, pb, pl, pr) = pad;
    let oh = (h + pt + pb - dilation * (kh - 1) - 1) / stride + 1;
    let ow = (wd + pl + pr - dilation * (kw - 1) - 1) / stride + 1;
    let mut out = vec![vec![vec![0.0; ow]; oh]; cout];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b.map_or(0.0, |b| b.data()[co]);
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky * dilation) as i64 - pt as i64;
                            let ix = (ox * stride + kx * dilation) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            s += w.at(&[co, ci, ky, kx]) * x.at(&[ci, iy as usize, ix as usize]);
                        }
                    }
                }
                out[co][oy][ox] = s;
            }
        }
    }
    out
}
