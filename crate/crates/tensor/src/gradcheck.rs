//! Central finite-difference gradient oracle.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffOptions {
    /// Perturbation size; must lie in `[1e-7, 1e-3]`.
    pub epsilon: f64,
    /// Denominator floor: error is `|a − n| / max(|a|, |n|, floor)`, so it
    /// degrades to an absolute error (scaled by `1/floor`) for tiny gradients.
    pub floor: f64,
    /// Check at most this many evenly spaced entries of each tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, floor: 1e-4, max_per_tensor: None }
    }
}

/// Worst-case agreement of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries whose perturbed evaluation was non-finite or failed.
    pub non_finite: usize,
    /// Entries whose stencil straddled a kink and were estimated one-sided.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    /// Sorted by decreasing `max_error`.
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.max_error)
    }

    pub fn failures(&self, threshold: f64) -> Vec<&ParamCheck> {
        self.entries
            .iter()
            .filter(|e| e.max_error >= threshold || e.non_finite > 0)
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Indices checked for a tensor of `numel` entries.
pub fn sample_indices(numel: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < numel => (0..m).map(|j| j * numel / m).collect(),
        _ => (0..numel).collect(),
    }
}

pub fn agreement_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Agreement between the two one-sided estimates above which the stencil
/// is treated as straddling a kink.
pub const KINK_TOLERANCE: f64 = 1e-5;

/// Rounding allowance, in units of `f64::EPSILON · |f|`, per evaluation.
const ROUNDING_ULPS: f64 = 16.0;

/// Numeric derivative from `f(p)`, `f(p±ε)` and `f(p±2ε)`.
///
/// Returns the central difference `(f(p+ε) − f(p−ε)) / 2ε` when the
/// second-order forward and backward differences agree. Otherwise a kink
/// (ReLU, max) lies within `2ε` of `p`; the one-sided estimate from the
/// side with the smaller second difference is returned, flagged `true`.
pub fn kink_aware_derivative(f0: f64, p1: f64, m1: f64, p2: f64, m2: f64, epsilon: f64, floor: f64) -> (f64, bool) {
    let central = (p1 - m1) / (2.0 * epsilon);
    let forward = (-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * epsilon);
    let backward = (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * epsilon);
    // Each one-sided stencil has coefficient mass 8 / 2ε.
    let scale = [f0, p1, m1, p2, m2].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rounding = 2.0 * 4.0 * ROUNDING_ULPS * f64::EPSILON * scale / epsilon;
    if (forward - backward).abs() <= rounding || agreement_error(forward, backward, floor) <= KINK_TOLERANCE {
        return (central, false);
    }
    let curve_fwd = (p2 - 2.0 * p1 + f0).abs();
    let curve_bwd = (f0 - 2.0 * m1 + m2).abs();
    (if curve_fwd <= curve_bwd { forward } else { backward }, true)
}

/// Compares backward gradients of `f` against finite differences for every
/// (sampled) scalar of every parameter; see [`kink_aware_derivative`].
///
/// `f` receives the graph and one leaf per entry of `params`, in order, and
/// must return a scalar.
pub fn finite_diff_check<F>(
    params: &[(String, Tensor<f64>)],
    opts: &FiniteDiffOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(TensorError::InvalidOption(format!(
            "epsilon {} outside [1e-7, 1e-3]",
            opts.epsilon
        )));
    }
    let mut values: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();

    let mut g = Graph::new();
    let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&values)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.dims().to_vec())))
        .collect();
    drop(g);

    let eval = |values: &[Tensor<f64>]| -> Option<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars).ok()?;
        let v = g.value(out).item();
        v.is_finite().then_some(v)
    };
    let f0 = eval(&values).ok_or(TensorError::NonFinite { op: "finite_diff_check" })?;

    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut entry = ParamCheck {
            name: name.clone(),
            max_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            non_finite: 0,
            kinks: 0,
        };
        for idx in sample_indices(values[pi].numel(), opts.max_per_tensor) {
            let orig = values[pi].data()[idx];
            let mut at = |delta: f64| {
                values[pi].data_mut()[idx] = orig + delta;
                eval(&values)
            };
            let e = opts.epsilon;
            let probes = [at(e), at(-e), at(2.0 * e), at(-2.0 * e)];
            values[pi].data_mut()[idx] = orig;
            entry.checked += 1;
            let [Some(p1), Some(m1), Some(p2), Some(m2)] = probes else {
                entry.non_finite += 1;
                continue;
            };
            let (numeric, kink) = kink_aware_derivative(f0, p1, m1, p2, m2, e, opts.floor);
            entry.kinks += usize::from(kink);
            let a = analytic[pi].data()[idx];
            let err = agreement_error(a, numeric, opts.floor);
            entry.max_abs_error = entry.max_abs_error.max((a - numeric).abs());
            if err > entry.max_error || entry.checked == 1 {
                entry.max_error = err;
                entry.worst_index = idx;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entries.push(entry);
    }
    entries.sort_by(|a, b| b.max_error.total_cmp(&a.max_error).then_with(|| a.name.cmp(&b.name)));
    Ok(GradCheckReport { entries })
}
