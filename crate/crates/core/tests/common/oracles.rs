//! Straight-from-definition reimplementations used as ground truth. They
//! share no code with the library.

// ---------------------------------------------------------------- losses

/// Each log argument is clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce(p: &[f64], g: &[f64]) -> f64 {
    let clamp = |v: f64| v.max(1e-7).min(1.0 - 1e-7);
    let mut total = 0.0;
    for (&p, &g) in p.iter().zip(g) {
        total += -(g * clamp(p).ln() + (1.0 - g) * clamp(1.0 - p).ln());
    }
    total / p.len() as f64
}

pub fn iou(p: &[f64], g: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&p, &g) in p.iter().zip(g) {
        inter += p * g;
        union += p + g - p * g;
    }
    1.0 - (inter + 1.0) / (union + 1.0)
}

// ---------------------------------------------------------------- metrics

pub fn mae(p: &[f64], g: &[f64]) -> f64 {
    p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
}

fn thresholds() -> impl Iterator<Item = f64> {
    (0..=255).map(|k| k as f64 / 255.0)
}

pub fn f_mean(p: &[f64], g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in thresholds() {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&p, &g) in p.iter().zip(g) {
            match (p >= t, g > 0.5) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f = if precision + recall > 0.0 {
            1.3 * precision * recall / (0.3 * precision + recall)
        } else {
            0.0
        };
        acc += f;
    }
    acc / 256.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// MATLAB-style `std` (normalised by `n − 1`, zero for one sample).
fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(values: &[f64]) -> f64 {
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std(values) + f64::EPSILON)
}

fn ssim(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let d = n - 1.0 + f64::EPSILON;
    let sx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / d;
    let sy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / d;
    let sxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / d;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure with α = 0.5.
pub fn s_measure(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let gt: Vec<bool> = g.iter().map(|&v| v > 0.5).collect();
    let y = gt.iter().filter(|&&b| b).count() as f64 / gt.len() as f64;
    if y == 0.0 {
        return (1.0 - mean(p)).clamp(0.0, 1.0);
    }
    if y == 1.0 {
        return mean(p).clamp(0.0, 1.0);
    }
    let fg: Vec<f64> = (0..p.len()).filter(|&i| gt[i]).map(|i| p[i]).collect();
    let bg: Vec<f64> = (0..p.len()).filter(|&i| !gt[i]).map(|i| 1.0 - p[i]).collect();
    let s_object = y * object(&fg) + (1.0 - y) * object(&bg);

    // Mean of the foreground coordinates, rounded half to even, then made
    // 1-based: the split is after that many rows and columns.
    let coords: Vec<(f64, f64)> =
        (0..p.len()).filter(|&i| gt[i]).map(|i| ((i / w) as f64, (i % w) as f64)).collect();
    let my = coords.iter().map(|c| c.0).sum::<f64>() / coords.len() as f64;
    let mx = coords.iter().map(|c| c.1).sum::<f64>() / coords.len() as f64;
    let cx = mx.round_ties_even() as usize + 1;
    let cy = my.round_ties_even() as usize + 1;
    let area = (h * w) as f64;
    let mut s_region = 0.0;
    // Quadrants as 1-based inclusive row/column ranges.
    for (r0, r1, c0, c1) in [(1, cy, 1, cx), (1, cy, cx + 1, w), (cy + 1, h, 1, cx), (cy + 1, h, cx + 1, w)] {
        if r1 < r0 || c1 < c0 {
            continue;
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                xs.push(p[(r - 1) * w + (c - 1)]);
                ys.push(if gt[(r - 1) * w + (c - 1)] { 1.0 } else { 0.0 });
            }
        }
        s_region += xs.len() as f64 / area * ssim(&xs, &ys);
    }
    (0.5 * s_object + 0.5 * s_region).clamp(0.0, 1.0)
}

/// Mean enhanced-alignment measure over the 256 thresholds.
pub fn e_mean(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let gt: Vec<f64> = g.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    let gt_sum: f64 = gt.iter().sum();
    let mut acc = 0.0;
    for t in thresholds() {
        let fm: Vec<f64> = p.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
        let enhanced: Vec<f64> = if gt_sum == 0.0 {
            fm.iter().map(|f| 1.0 - f).collect()
        } else if gt_sum == n {
            fm.clone()
        } else {
            let (mf, mg) = (mean(&fm), mean(&gt));
            fm.iter()
                .zip(&gt)
                .map(|(f, g)| {
                    let (df, dg) = (f - mf, g - mg);
                    let align = 2.0 * dg * df / (dg * dg + df * df + f64::EPSILON);
                    (align + 1.0).powi(2) / 4.0
                })
                .collect()
        };
        acc += enhanced.iter().sum::<f64>() / n;
    }
    acc / 256.0
}

// ---------------------------------------------------------------- resampling

/// Bilinear resize with half-pixel centres (no corner alignment), one
/// channel stored row-major.
pub fn bilinear(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let src = |d: usize, inn: usize, out: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * inn as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inn - 1);
        let i1 = (i0 + 1).min(inn - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let (y0, y1, ly) = src(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, lx) = src(ox, w, ow);
            out[oy * ow + ox] = (1.0 - ly) * ((1.0 - lx) * x[y0 * w + x0] + lx * x[y0 * w + x1])
                + ly * ((1.0 - lx) * x[y1 * w + x0] + lx * x[y1 * w + x1]);
        }
    }
    out
}

/// Adaptive average pooling with windows `[⌊i·in/out⌋, ⌈(i+1)·in/out⌉)`.
pub fn adaptive_avg(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let (y0, y1) = (oy * h / oh, ((oy + 1) * h).div_ceil(oh));
        for ox in 0..ow {
            let (x0, x1) = (ox * w / ow, ((ox + 1) * w).div_ceil(ow));
            let mut s = 0.0;
            for y in y0..y1 {
                for xx in x0..x1 {
                    s += x[y * w + xx];
                }
            }
            out[oy * ow + ox] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

// ---------------------------------------------------------------- masks

/// 8-connected components of a binary mask, by union-find. Returns the
/// pixel indices of each component.
pub fn components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            // Union with the already visited half of the 8-neighbourhood.
            let neighbours = [(0isize, -1isize), (-1, -1), (-1, 0), (-1, 1)];
            for (dy, dx) in neighbours {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask[j] {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..h * w {
        if mask[i] {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

/// Pixels of `comp` on the image border or with a 4-neighbour outside it.
pub fn boundary_ring(comp: &[usize], h: usize, w: usize) -> usize {
    let set: std::collections::HashSet<usize> = comp.iter().copied().collect();
    comp.iter()
        .filter(|&&i| {
            let (y, x) = (i / w, i % w);
            y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || [i - w, i + w, i - 1, i + 1].iter().any(|j| !set.contains(j))
        })
        .count()
}

// ---------------------------------------------------------------- units

/// One-channel 1×1 convolution: `out[o] = Σ_i w[o][i]·x[i] + b[o]` per pixel.
pub fn conv1x1(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let c = x.len();
    let n = x[0].len();
    (0..b.len())
        .map(|o| (0..n).map(|px| b[o] + (0..c).map(|i| w[o * c + i] * x[i][px]).sum::<f64>()).collect())
        .collect()
}

/// Per-channel attention `softmax(q kᵀ / √w) v` on `h×w` maps.
pub fn channel_attention(q: &[f64], k: &[f64], v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let scores: Vec<f64> = (0..h)
            .map(|j| (0..w).map(|t| q[i * w + t] * k[j * w + t]).sum::<f64>() / (w as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for t in 0..w {
            out[i * w + t] = (0..h).map(|j| e[j] / z * v[j * w + t]).sum();
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
