//! Backward rules against central finite differences, 20 seeds per op.

mod common;

use common::*;
use tscnet_tensor::{
    finite_diff_check, Conv2dSpec, CustomOp, FiniteDiffOptions, Graph, Padding, Result, Tensor,
    Var,
};

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

fn opts() -> FiniteDiffOptions {
    FiniteDiffOptions { epsilon: 1e-6, floor: 1e-6, max_per_tensor: None }
}

/// Checks `sum(op(inputs) ⊙ r)` for a fixed random weighting `r`.
fn check<F>(seed: u64, inputs: Vec<Tensor<f64>>, op: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let params: Vec<(String, Tensor<f64>)> =
        inputs.into_iter().enumerate().map(|(i, t)| (format!("in{i}"), t)).collect();
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars).unwrap();
        g.value(out).dims().to_vec()
    };
    let mut r = rng(seed ^ 0x5eed);
    let weights = uniform(&mut r, &probe, -1.0, 1.0);
    let report = finite_diff_check(&params, &opts(), |g, vars| {
        let out = op(g, vars)?;
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w)?;
        g.sum(prod)
    })
    .unwrap();
    assert!(
        report.max_error() < TOL,
        "seed {seed}: worst {:?}",
        report.entries.first()
    );
}

fn dims(r: &mut rand_chacha::ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rand::Rng::random_range(r, lo..=hi)
}

#[test]
fn conv2d() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (cin, cout) = (dims(&mut r, 1, 3), dims(&mut r, 1, 3));
        let (h, w) = (dims(&mut r, 3, 6), dims(&mut r, 3, 6));
        let (kh, kw) = (dims(&mut r, 1, 3), dims(&mut r, 1, 3));
        let dilation = dims(&mut r, 1, 2);
        let stride = dims(&mut r, 1, 2);
        let p = Padding {
            top: dims(&mut r, 0, 2),
            bottom: dims(&mut r, 0, 2),
            left: dims(&mut r, 0, 2),
            right: dims(&mut r, 0, 2),
        };
        let spec = Conv2dSpec { stride, dilation, padding: p };
        let x = uniform(&mut r, &[cin, h + 2 * kh, w + 2 * kw], -1.0, 1.0);
        let k = uniform(&mut r, &[cout, cin, kh, kw], -1.0, 1.0);
        let b = uniform(&mut r, &[cout], -1.0, 1.0);
        check(seed, vec![x, k, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec));
    }
}

#[test]
fn deconv2d() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (cin, cout, h) = (dims(&mut r, 1, 3), dims(&mut r, 1, 3), dims(&mut r, 1, 4));
        let x = uniform(&mut r, &[cin, h, h + 1], -1.0, 1.0);
        let k = uniform(&mut r, &[cin, cout, 4, 4], -1.0, 1.0);
        let b = uniform(&mut r, &[cout], -1.0, 1.0);
        check(seed, vec![x, k, b], |g, v| g.deconv2d(v[0], v[1], Some(v[2]), 2, 1));
    }
}

#[test]
fn linear_and_matmul() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (m, n, p) = (dims(&mut r, 1, 5), dims(&mut r, 1, 5), dims(&mut r, 1, 5));
        let x = uniform(&mut r, &[n], -1.0, 1.0);
        let w = uniform(&mut r, &[m, n], -1.0, 1.0);
        let b = uniform(&mut r, &[m], -1.0, 1.0);
        check(seed, vec![x, w, b], |g, v| g.linear(v[0], v[1], Some(v[2])));
        let a = uniform(&mut r, &[m, n], -1.0, 1.0);
        let c = uniform(&mut r, &[n, p], -1.0, 1.0);
        check(seed, vec![a, c], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.transpose(y)
        });
    }
}

#[test]
fn activations() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let shape = [dims(&mut r, 1, 3), dims(&mut r, 1, 4), dims(&mut r, 1, 4)];
        check(seed, vec![away_from_zero(&mut r, &shape)], |g, v| g.relu(v[0]));
        check(seed, vec![uniform(&mut r, &shape, -4.0, 4.0)], |g, v| g.sigmoid(v[0]));
        check(seed, vec![uniform(&mut r, &shape, -3.0, 3.0)], |g, v| g.gelu(v[0]));
        check(seed, vec![uniform(&mut r, &shape, -3.0, 3.0)], |g, v| g.softmax(v[0]));
        check(seed, vec![uniform(&mut r, &shape, 0.2, 2.0)], |g, v| g.ln(v[0]));
        check(seed, vec![uniform(&mut r, &shape, -2.0, 2.0)], |g, v| g.affine(v[0], -1.5, 0.25));
        check(seed, vec![uniform(&mut r, &shape, 0.05, 0.95)], |g, v| g.clamp(v[0], 1e-7, 1.0 - 1e-7));
    }
}

#[test]
fn broadcasting_binary_ops() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c, h, w) = (dims(&mut r, 1, 3), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
        let x = uniform(&mut r, &[c, h, w], -1.0, 1.0);
        let chan = uniform(&mut r, &[c, 1, 1], -1.0, 1.0);
        let plane = uniform(&mut r, &[1, h, w], 0.5, 1.5);
        let scalar = uniform(&mut r, &[1], 0.5, 1.5);
        check(seed, vec![x.clone(), chan.clone()], |g, v| g.add(v[0], v[1]));
        check(seed, vec![chan, x.clone()], |g, v| g.mul(v[0], v[1]));
        check(seed, vec![x.clone(), plane], |g, v| g.div(v[0], v[1]));
        check(seed, vec![x, scalar], |g, v| g.mul(v[0], v[1]));
    }
}

#[test]
fn reductions_and_reshapes() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c, h, w) = (dims(&mut r, 1, 3), dims(&mut r, 2, 4), dims(&mut r, 2, 4));
        let x = uniform(&mut r, &[c, h, w], -1.0, 1.0);
        check(seed, vec![x.clone()], |g, v| g.sum(v[0]));
        check(seed, vec![x.clone()], |g, v| g.mean(v[0]));
        check(seed, vec![x.clone()], |g, v| g.global_avg(v[0]));
        check(seed, vec![x.clone()], |g, v| g.channel_mean(v[0]));
        check(seed, vec![x.clone()], |g, v| g.reshape(v[0], &[c * h, w]));
        let y = uniform(&mut r, &[2, h, w], -1.0, 1.0);
        check(seed, vec![x, y], |g, v| g.concat(&[v[0], v[1], v[0]]));
    }
}

#[test]
fn max_selections() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c, h, w) = (dims(&mut r, 1, 3), 2 * dims(&mut r, 1, 3), 2 * dims(&mut r, 1, 3));
        let x = distinct(&mut r, &[c, h, w]);
        check(seed, vec![x.clone()], |g, v| g.max_pool2(v[0]));
        check(seed, vec![x], |g, v| g.channel_max(v[0]));
    }
}

#[test]
fn resampling() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c, h, w) = (dims(&mut r, 1, 3), dims(&mut r, 2, 7), dims(&mut r, 2, 7));
        let x = uniform(&mut r, &[c, h, w], -1.0, 1.0);
        let (ph, pw) = (dims(&mut r, 1, h), dims(&mut r, 1, w));
        check(seed, vec![x.clone()], |g, v| g.adaptive_avg(v[0], ph, pw));
        let (uh, uw) = (h + dims(&mut r, 0, 5), w + dims(&mut r, 0, 5));
        check(seed, vec![x], |g, v| g.bilinear_up(v[0], uh, uw));
    }
}

#[test]
fn layer_norm() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (n, d) = (dims(&mut r, 1, 4), dims(&mut r, 2, 6));
        let x = uniform(&mut r, &[n, d], -2.0, 2.0);
        let gamma = uniform(&mut r, &[d], 0.5, 1.5);
        let beta = uniform(&mut r, &[d], -0.5, 0.5);
        check(seed, vec![x, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    }
}

#[test]
fn channelwise_attention() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c, h) = (dims(&mut r, 1, 3), dims(&mut r, 1, 5));
        let q = uniform(&mut r, &[c, h, h], -1.5, 1.5);
        let k = uniform(&mut r, &[c, h, h], -1.5, 1.5);
        let v = uniform(&mut r, &[c, h, h], -1.5, 1.5);
        check(seed, vec![q, k, v], |g, v| g.channelwise_attention(v[0], v[1], v[2]));
    }
}

#[test]
fn multi_head_attention() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let heads = dims(&mut r, 1, 3);
        let (n, d) = (dims(&mut r, 1, 6), heads * dims(&mut r, 1, 3));
        let q = uniform(&mut r, &[n, d], -1.5, 1.5);
        let k = uniform(&mut r, &[n, d], -1.5, 1.5);
        let v = uniform(&mut r, &[n, d], -1.5, 1.5);
        check(seed, vec![q, k, v], |g, v| g.multi_head_attention(v[0], v[1], v[2], heads));
    }
}

#[test]
fn sigmoid_of_linear_with_eight_params() {
    let mut r = rng(1);
    let x = uniform(&mut r, &[3], -1.0, 1.0);
    let params = vec![
        ("w".to_string(), uniform(&mut r, &[2, 3], -1.0, 1.0)),
        ("b".to_string(), uniform(&mut r, &[2], -1.0, 1.0)),
    ];
    let opts = FiniteDiffOptions { epsilon: 1e-5, floor: 1e-6, max_per_tensor: None };
    let report = finite_diff_check(&params, &opts, |g, v| {
        let xv = g.constant(x.clone());
        let y = g.linear(xv, v[0], Some(v[1]))?;
        let s = g.sigmoid(y)?;
        g.sum(s)
    })
    .unwrap();
    assert_eq!(report.entries.iter().map(|e| e.checked).sum::<usize>(), 8);
    assert!(report.max_error() < 1e-6, "{report:?}");
}

#[test]
fn constant_function_has_zero_gradient_both_ways() {
    let params = vec![("p".to_string(), Tensor::<f64>::full(vec![4], 0.3))];
    let report = finite_diff_check(&params, &FiniteDiffOptions::default(), |g, _| {
        let c = g.constant(Tensor::scalar(2.5));
        g.sum(c)
    })
    .unwrap();
    let e = &report.entries[0];
    assert_eq!(e.analytic, 0.0);
    assert_eq!(e.numeric, 0.0);
    assert!(e.max_abs_error < 1e-9);
}

/// `x²` with a deliberately wrong derivative `3x`.
struct CorruptSquare;

impl CustomOp<f64> for CorruptSquare {
    fn name(&self) -> &'static str {
        "corrupt_square"
    }
    fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(inputs[0].map(|v| v * v))
    }
    fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, g: &Tensor<f64>) -> Vec<Tensor<f64>> {
        let gx = inputs[0].data().iter().zip(g.data()).map(|(x, g)| 3.0 * x * g).collect();
        vec![Tensor::new(inputs[0].dims().to_vec(), gx).unwrap()]
    }
}

#[test]
fn corrupted_backward_rule_is_detected() {
    let params = vec![("x".to_string(), Tensor::<f64>::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap())];
    let report = finite_diff_check(&params, &FiniteDiffOptions::default(), |g, v| {
        let y = g.custom(Box::new(CorruptSquare), &[v[0]])?;
        g.sum(y)
    })
    .unwrap();
    assert!(report.max_error() > 1e-2);
    assert_eq!(report.failures(1e-4).len(), 1);
}

#[test]
fn non_finite_perturbations_are_reported_not_fatal() {
    // ln(x) at x = 5e-7 with epsilon 1e-6 hits ln of a negative number.
    let params = vec![("x".to_string(), Tensor::<f64>::new(vec![2], vec![5e-7, 1.0]).unwrap())];
    let opts = FiniteDiffOptions { epsilon: 1e-6, ..Default::default() };
    let report = finite_diff_check(&params, &opts, |g, v| {
        let y = g.ln(v[0])?;
        g.sum(y)
    })
    .unwrap();
    assert_eq!(report.entries[0].non_finite, 1);
    assert_eq!(report.entries[0].checked, 2);
}

#[test]
fn epsilon_outside_range_is_rejected() {
    let params = vec![("x".to_string(), Tensor::<f64>::zeros(vec![1]))];
    for eps in [1e-8, 1e-2] {
        let opts = FiniteDiffOptions { epsilon: eps, ..Default::default() };
        assert!(finite_diff_check(&params, &opts, |g, v| g.sum(v[0])).is_err());
    }
}

#[test]
fn stencil_straddling_a_relu_hinge_uses_the_clean_side() {
    let opts = FiniteDiffOptions::default();
    let hinge = 0.3 - 0.5 * opts.epsilon;
    let params = vec![("x".to_string(), Tensor::<f64>::full(vec![3], 0.3))];
    let f = |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
        let r = g.affine(v[0], 1.0, -hinge)?;
        let r = g.relu(r)?;
        let sq = g.mul(v[0], v[0])?;
        let y = g.add(r, sq)?;
        g.sum(y)
    };
    let report = finite_diff_check(&params, &opts, f).unwrap();
    let e = &report.entries[0];
    assert_eq!(e.kinks, 3);
    assert!((e.analytic - 1.6).abs() < 1e-12, "{e:?}");
    assert!(e.max_error < 1e-6, "{e:?}");

    // Away from the hinge no entry is flagged.
    let params = vec![("x".to_string(), Tensor::<f64>::full(vec![3], 0.7))];
    let report = finite_diff_check(&params, &opts, f).unwrap();
    assert_eq!(report.entries[0].kinks, 0);
    assert!(report.max_error() < 1e-8);
}
