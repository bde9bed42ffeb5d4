#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscnet::metrics::Map;
use tscnet::{ModelConfig, ParamStore};
use tscnet_tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims.to_vec(), |_| r.random_range(lo..hi))
}

pub fn uniform_f32(r: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(dims.to_vec(), |_| r.random::<f32>())
}

/// A random `h×w` prediction mixing continuous values with exact
/// threshold levels `k/255`, so ties at thresholds are exercised.
pub fn random_pred(r: &mut ChaCha8Rng, h: usize, w: usize) -> Map {
    let data = (0..h * w)
        .map(|_| if r.random_bool(0.3) { f64::from(r.random_range(0u8..=255)) / 255.0 } else { r.random() })
        .collect();
    Map::new(h, w, data).unwrap()
}

/// A random binary mask with at least one foreground and one background
/// pixel: a random rectangle plus salt noise.
pub fn random_gt(r: &mut ChaCha8Rng, h: usize, w: usize) -> Map {
    loop {
        let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
        let (y1, x1) = (r.random_range(y0 + 1..=h), r.random_range(x0 + 1..=w));
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let inside = (y0..y1).contains(&y) && (x0..x1).contains(&x);
                if inside != r.random_bool(0.1) { 1.0 } else { 0.0 }
            })
            .collect();
        let fg = data.iter().filter(|&&v| v == 1.0).count();
        if fg > 0 && fg < h * w {
            return Map::new(h, w, data).unwrap();
        }
    }
}

/// Parameters with small random biases, every TRU gate set to `beta` and
/// optionally perturbed weights, so that no ReLU is exactly at zero and
/// the attention projections receive gradient.
pub fn lively_params(cfg: &ModelConfig, seed: u64, beta: f32) -> ParamStore<f32> {
    let mut p = ParamStore::init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for (name, t) in p.iter_mut() {
        if name.contains(".tru.beta") {
            t.data_mut().fill(beta);
        } else if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.1..0.1));
        }
    }
    p
}

/// A `3×s×s` image in `[0, 1]`.
pub fn random_image(seed: u64, s: usize) -> Tensor<f32> {
    let mut r = rng(seed);
    uniform_f32(&mut r, &[3, s, s])
}
