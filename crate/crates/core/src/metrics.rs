//! Saliency evaluation: MAE, mean F-measure, S-measure and mean E-measure.
//!
//! Predictions are used as given (no min-max rescaling). Threshold sweeps
//! binarise with `p ≥ k/255` for `k = 0..=255`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BETA2: f64 = 0.3;
pub const ALPHA: f64 = 0.5;
pub const THRESHOLDS: usize = 256;
const EPS: f64 = f64::EPSILON;

/// A single-channel `h×w` map. Ground-truth maps hold 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w || h == 0 || w == 0 {
            return Err(Error::Data(format!("map of {} values cannot be {h}×{w}", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Self { h, w, data: vec![v; h * w] }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn same_size(op: &str, pred: &Map, gt: &Map) -> Result<()> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::Data(format!(
            "{op}: prediction is {}×{}, ground truth is {}×{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    Ok(())
}

fn threshold(k: usize) -> f64 {
    k as f64 / (THRESHOLDS - 1) as f64
}

fn is_fg(g: f64) -> bool {
    g >= 0.5
}

pub fn mae(pred: &Map, gt: &Map) -> Result<f64> {
    same_size("mae", pred, gt)?;
    let s: f64 = pred.data.iter().zip(&gt.data).map(|(p, g)| (p - g).abs()).sum();
    Ok(s / pred.data.len() as f64)
}

/// `(1 + β²)PR / (β²P + R)`, zero when undefined.
pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / den
    }
}

/// F-measure at every threshold.
pub fn f_measure_curve(pred: &Map, gt: &Map) -> Result<Vec<f64>> {
    same_size("f_measure", pred, gt)?;
    let positives = gt.data.iter().filter(|&&g| is_fg(g)).count();
    let mut curve = Vec::with_capacity(THRESHOLDS);
    for k in 0..THRESHOLDS {
        let t = threshold(k);
        let (mut tp, mut selected) = (0usize, 0usize);
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            if p >= t {
                selected += 1;
                tp += usize::from(is_fg(g));
            }
        }
        let precision = if selected == 0 { 0.0 } else { tp as f64 / selected as f64 };
        let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
        curve.push(f_beta(precision, recall));
    }
    Ok(curve)
}

pub fn f_measure_mean(pred: &Map, gt: &Map) -> Result<f64> {
    let c = f_measure_curve(pred, gt)?;
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

/// Mean and sample variance (`n − 1`; zero below two samples).
fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (mut n, mut s) = (0usize, 0.0);
    for x in v.clone() {
        n += 1;
        s += x;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let m = s / n as f64;
    let var = if n < 2 { 0.0 } else { v.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64 };
    (m, var, n)
}

/// Similarity of the values of `x` on the pixels selected by `mask` to 1.
fn s_object(x: &[f64], mask: &[bool]) -> f64 {
    let sel = x.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v);
    let (m, var, _) = mean_var(sel);
    2.0 * m / (m * m + 1.0 + var.sqrt() + EPS)
}

fn object_score(pred: &Map, gt: &Map) -> f64 {
    let fg_mask: Vec<bool> = gt.data.iter().map(|&g| is_fg(g)).collect();
    let bg_mask: Vec<bool> = fg_mask.iter().map(|m| !m).collect();
    let u = fg_mask.iter().filter(|&&m| m).count() as f64 / fg_mask.len() as f64;
    let fg: Vec<f64> = pred.data.iter().zip(&fg_mask).map(|(&p, &m)| if m { p } else { 0.0 }).collect();
    let bg: Vec<f64> = pred.data.iter().zip(&bg_mask).map(|(&p, &m)| if m { 1.0 - p } else { 0.0 }).collect();
    u * s_object(&fg, &fg_mask) + (1.0 - u) * s_object(&bg, &bg_mask)
}

/// Foreground centroid, rounded half-to-even and shifted by one; the
/// image centre when there is no foreground.
fn centroid(gt: &Map) -> (usize, usize) {
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for y in 0..gt.h {
        for x in 0..gt.w {
            if is_fg(gt.at(y, x)) {
                n += 1;
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    let (cx, cy) = if n == 0 {
        ((gt.w as f64 / 2.0).round_ties_even(), (gt.h as f64 / 2.0).round_ties_even())
    } else {
        ((sx / n as f64).round_ties_even() + 1.0, (sy / n as f64).round_ties_even() + 1.0)
    };
    ((cx as usize).min(gt.w), (cy as usize).min(gt.h))
}

/// SSIM-style structural similarity of two equally sized regions.
fn region_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len();
    let mx = p.iter().sum::<f64>() / n as f64;
    let my = g.iter().sum::<f64>() / n as f64;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    if n > 1 {
        for (&a, &b) in p.iter().zip(g) {
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
            cxy += (a - mx) * (b - my);
        }
        let d = (n - 1) as f64;
        vx /= d;
        vy /= d;
        cxy /= d;
    }
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pred: &Map, gt: &Map) -> f64 {
    let (cx, cy) = centroid(gt);
    let (h, w) = (gt.h, gt.w);
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let mut score = 0.0;
    for (y0, y1, x0, x1) in quads {
        let n = (y1 - y0) * (x1 - x0);
        if n == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pred.at(y, x));
                g.push(if is_fg(gt.at(y, x)) { 1.0 } else { 0.0 });
            }
        }
        score += n as f64 / area * region_ssim(&p, &g);
    }
    score
}

/// Structure measure `α·S_object + (1 − α)·S_region`, clamped at 0.
pub fn s_measure(pred: &Map, gt: &Map) -> Result<f64> {
    same_size("s_measure", pred, gt)?;
    let fg = gt.data.iter().filter(|&&g| is_fg(g)).count() as f64 / gt.data.len() as f64;
    let s = if fg == 0.0 {
        1.0 - pred.mean()
    } else if fg == 1.0 {
        pred.mean()
    } else {
        ALPHA * object_score(pred, gt) + (1.0 - ALPHA) * region_score(pred, gt)
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Enhanced alignment of a binary map with the ground truth.
fn e_binary(fm: &[bool], gt: &[bool]) -> f64 {
    let n = gt.len() as f64;
    let gt_fg = gt.iter().filter(|&&g| g).count();
    let sum: f64 = if gt_fg == 0 {
        fm.iter().filter(|&&f| !f).count() as f64
    } else if gt_fg == gt.len() {
        fm.iter().filter(|&&f| f).count() as f64
    } else {
        let mf = fm.iter().filter(|&&f| f).count() as f64 / n;
        let mg = gt_fg as f64 / n;
        fm.iter()
            .zip(gt)
            .map(|(&f, &g)| {
                let a = f64::from(u8::from(f)) - mf;
                let b = f64::from(u8::from(g)) - mg;
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0) * (align + 1.0) / 4.0
            })
            .sum()
    };
    sum / n
}

/// E-measure at every threshold.
pub fn e_measure_curve(pred: &Map, gt: &Map) -> Result<Vec<f64>> {
    same_size("e_measure", pred, gt)?;
    let g: Vec<bool> = gt.data.iter().map(|&v| is_fg(v)).collect();
    let mut fm = vec![false; g.len()];
    Ok((0..THRESHOLDS)
        .map(|k| {
            let t = threshold(k);
            for (f, &p) in fm.iter_mut().zip(&pred.data) {
                *f = p >= t;
            }
            e_binary(&fm, &g)
        })
        .collect())
}

pub fn e_measure_mean(pred: &Map, gt: &Map) -> Result<f64> {
    let c = e_measure_curve(pred, gt)?;
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub s_alpha: f64,
    pub f_mean: f64,
    pub e_mean: f64,
    pub mae: f64,
}

pub fn evaluate_pair(id: impl Into<String>, pred: &Map, gt: &Map) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        id: id.into(),
        s_alpha: s_measure(pred, gt)?,
        f_mean: f_measure_mean(pred, gt)?,
        e_mean: e_measure_mean(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

/// Per-image metrics and their arithmetic means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub s_alpha: f64,
    pub f_beta_mean: f64,
    pub e_xi_mean: f64,
    pub mae: f64,
}

impl MetricsReport {
    pub fn from_images(images: Vec<ImageMetrics>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("no images to evaluate".into()));
        }
        let n = images.len() as f64;
        let avg = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            s_alpha: avg(|m| m.s_alpha),
            f_beta_mean: avg(|m| m.f_mean),
            e_xi_mean: avg(|m| m.e_mean),
            mae: avg(|m| m.mae),
            images,
        })
    }

    /// `image_id,s_alpha,f_mean,e_mean,mae` rows followed by `MEAN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,s_alpha,f_mean,e_mean,mae\n");
        for m in &self.images {
            let _ = writeln!(out, "{},{:.9},{:.9},{:.9},{:.9}", m.id, m.s_alpha, m.f_mean, m.e_mean, m.mae);
        }
        let _ = writeln!(
            out,
            "MEAN,{:.9},{:.9},{:.9},{:.9}",
            self.s_alpha, self.f_beta_mean, self.e_xi_mean, self.mae
        );
        out
    }
}
