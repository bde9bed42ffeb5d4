//! Synthetic overhead-style scenes: textured background, several small
//! irregular objects, random illumination and noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tscnet_tensor::Tensor;

use super::Sample;
use crate::error::{Error, Result};
use crate::params::name_seed;

const PLACEMENT_TRIES: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    /// Inclusive range of objects per image.
    pub objects: (usize, usize),
    /// Relative weights of ellipse, rotated rectangle and blob polygon.
    pub shape_weights: [f64; 3],
    /// Object area range as a fraction of `size²`.
    pub area: (f64, f64),
    /// Amplitude of the background texture.
    pub texture: f64,
    /// Global illumination gain range.
    pub gain: (f64, f64),
    /// Standard deviation of pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            objects: (1, 5),
            shape_weights: [1.0, 1.0, 1.0],
            area: (0.01, 0.06),
            texture: 0.12,
            gain: (0.45, 1.0),
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic data: {m}")));
        if self.size < 8 {
            return bad("size must be at least 8");
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return bad("object range must satisfy 1 ≤ min ≤ max");
        }
        if !(self.area.0 > 0.0 && self.area.0 <= self.area.1 && self.area.1 < 0.5) {
            return bad("area range must satisfy 0 < min ≤ max < 0.5");
        }
        if self.shape_weights.iter().any(|&w| w < 0.0) || self.shape_weights.iter().sum::<f64>() <= 0.0 {
            return bad("shape weights must be non-negative and not all zero");
        }
        if !(self.gain.0 > 0.0 && self.gain.0 <= self.gain.1) {
            return bad("gain range must be positive and ordered");
        }
        Ok(())
    }

    /// Pixel-area bounds of one object.
    pub fn area_px(&self) -> (f64, f64) {
        let s2 = (self.size * self.size) as f64;
        (self.area.0 * s2, self.area.1 * s2)
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { a: f64, b: f64 },
    Rect { hw: f64, hh: f64 },
    Blob,
}

/// A shape in object coordinates plus its placement.
struct Object {
    shape: Shape,
    poly: Vec<(f64, f64)>,
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    radius: f64,
}

impl Object {
    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig, area: f64) -> Self {
        let total: f64 = cfg.shape_weights.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut family = 0;
        for (i, w) in cfg.shape_weights.iter().enumerate() {
            if pick < *w {
                family = i;
                break;
            }
            pick -= w;
        }
        let aspect = rng.random_range(0.45..1.0);
        let theta = rng.random_range(0.0..PI);
        let (shape, poly, radius) = match family {
            0 => {
                let a = (area / (PI * aspect)).sqrt();
                (Shape::Ellipse { a, b: a * aspect }, Vec::new(), a)
            }
            1 => {
                let w = (area / aspect).sqrt();
                let (hw, hh) = (w / 2.0, w * aspect / 2.0);
                (Shape::Rect { hw, hh }, Vec::new(), hw.hypot(hh))
            }
            _ => {
                let k = rng.random_range(5..=9);
                let mut pts: Vec<(f64, f64)> = (0..k)
                    .map(|i| {
                        let ang = 2.0 * PI * (i as f64 + rng.random_range(-0.3..0.3)) / k as f64;
                        let r = rng.random_range(0.55..1.0);
                        (r * ang.cos(), r * ang.sin())
                    })
                    .collect();
                let shoelace: f64 = (0..k)
                    .map(|i| {
                        let (a, b) = (pts[i], pts[(i + 1) % k]);
                        a.0 * b.1 - b.0 * a.1
                    })
                    .sum::<f64>()
                    .abs()
                    / 2.0;
                let scale = (area / shoelace).sqrt();
                for p in &mut pts {
                    p.0 *= scale;
                    p.1 *= scale;
                }
                (Shape::Blob, pts, scale)
            }
        };
        Object { shape, poly, cx: 0.0, cy: 0.0, cos: theta.cos(), sin: theta.sin(), radius }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        match self.shape {
            Shape::Ellipse { a, b } => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            Shape::Rect { hw, hh } => u.abs() <= hw && v.abs() <= hh,
            Shape::Blob => {
                let n = self.poly.len();
                let mut inside = false;
                for i in 0..n {
                    let (a, b) = (self.poly[i], self.poly[(i + n - 1) % n]);
                    if (a.1 > v) != (b.1 > v) && u < (b.0 - a.0) * (v - a.1) / (b.1 - a.1) + a.0 {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

/// Largest 8-connected component of `pixels` (indices into an `s×s` grid).
fn largest_component(pixels: &[usize], s: usize) -> Vec<usize> {
    let mut member = vec![false; s * s];
    for &p in pixels {
        member[p] = true;
    }
    let mut seen = vec![false; s * s];
    let mut best: Vec<usize> = Vec::new();
    for &start in pixels {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let (y, x) = (comp[head] / s, comp[head] % s);
            head += 1;
            for ny in y.saturating_sub(1)..=(y + 1).min(s - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(s - 1) {
                    let q = ny * s + nx;
                    if member[q] && !seen[q] {
                        seen[q] = true;
                        comp.push(q);
                    }
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Pixels of the component with a 4-neighbour outside it.
fn boundary_len(comp: &[usize], s: usize) -> usize {
    let mut member = vec![false; s * s];
    for &p in comp {
        member[p] = true;
    }
    comp.iter()
        .filter(|&&p| {
            let (y, x) = (p / s, p % s);
            y == 0 || x == 0 || y == s - 1 || x == s - 1
                || !member[p - s] || !member[p + s] || !member[p - 1] || !member[p + 1]
        })
        .count()
}

/// Tries to place one object; returns its pixels.
fn place(rng: &mut ChaCha8Rng, cfg: &SynthConfig, blocked: &[bool]) -> Option<Vec<usize>> {
    let s = cfg.size;
    let (lo, hi) = cfg.area_px();
    for _ in 0..PLACEMENT_TRIES {
        let area = rng.random_range(lo..=hi);
        let mut obj = Object::random(rng, cfg, area);
        let margin = obj.radius + 1.0;
        if 2.0 * margin >= s as f64 {
            continue;
        }
        obj.cx = rng.random_range(margin..s as f64 - margin);
        obj.cy = rng.random_range(margin..s as f64 - margin);
        let (x0, x1) = ((obj.cx - margin).floor() as usize, ((obj.cx + margin).ceil() as usize).min(s));
        let (y0, y1) = ((obj.cy - margin).floor() as usize, ((obj.cy + margin).ceil() as usize).min(s));
        let mut pixels = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                if obj.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    pixels.push(y * s + x);
                }
            }
        }
        if pixels.is_empty() {
            continue;
        }
        let comp = largest_component(&pixels, s);
        let ring = boundary_len(&comp, s) as f64;
        let area = comp.len() as f64;
        if area < lo - ring || area > hi + ring || comp.iter().any(|&p| blocked[p]) {
            continue;
        }
        return Some(comp);
    }
    None
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Sample `index` of the dataset defined by `cfg`.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let s = cfg.size;
    let n = s * s;
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(cfg.seed, &format!("synth{index}")));

    // Background: per-channel base colour and a few oriented sinusoids.
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.6));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let ang = rng.random_range(0.0..PI);
            let freq = rng.random_range(0.05..0.5);
            (freq * ang.cos(), freq * ang.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
        })
        .collect();
    let mut img = vec![0.0f64; 3 * n];
    for y in 0..s {
        for x in 0..s {
            let t: f64 = waves.iter().map(|(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin()).sum();
            for c in 0..3 {
                img[c * n + y * s + x] = base[c] + cfg.texture * t / 3.0;
            }
        }
    }

    // Objects, separated by at least one pixel in every direction.
    let mut mask = vec![0.0f32; n];
    let mut blocked = vec![false; n];
    let count = rng.random_range(cfg.objects.0..=cfg.objects.1);
    for _ in 0..count {
        let Some(comp) = place(&mut rng, cfg, &blocked) else { continue };
        let colour: [f64; 3] = std::array::from_fn(|c| {
            let delta = rng.random_range(0.25..0.45) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            clamp01(base[c] + delta).clamp(0.05, 0.95)
        });
        let (gx, gy) = (rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
        for &p in &comp {
            let (y, x) = (p / s, p % s);
            mask[p] = 1.0;
            let shade = gx * (x as f64 - s as f64 / 2.0) + gy * (y as f64 - s as f64 / 2.0);
            for c in 0..3 {
                img[c * n + p] = colour[c] + shade;
            }
            for ny in y.saturating_sub(1)..=(y + 1).min(s - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(s - 1) {
                    blocked[ny * s + nx] = true;
                }
            }
        }
    }

    let gain = rng.random_range(cfg.gain.0..=cfg.gain.1);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("non-negative std");
    let image: Vec<f32> = img.iter().map(|&v| clamp01(v * gain + noise.sample(&mut rng)) as f32).collect();
    Ok(Sample {
        id: format!("synth_{index:05}"),
        image: Tensor::new(vec![3, s, s], image)?,
        mask: Tensor::new(vec![1, s, s], mask)?,
    })
}

pub fn generate_dataset(cfg: &SynthConfig, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    (0..n).map(|i| generate_sample(cfg, i)).collect()
}
