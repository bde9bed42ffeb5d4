//! The full network: backbone, three TSCM levels and the decoder.

pub mod backbone;
pub mod decoder;
pub mod tscm;
pub mod vit;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscnet_tensor::{Conv2dSpec, Graph, Padding, Real, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{name_seed, Bindings};

pub use backbone::FeatureSet;
pub use tscm::TscmTrace;

/// Input normalisation: `(x − MEAN) / STD` per channel.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off; output is a pure function of image and parameters.
    Eval,
    /// Dropout on, masks drawn from `seed` and the layer name.
    Train { seed: u64 },
}

/// Every map the network produces for one image.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub features: FeatureSet,
    /// Levels 2, 3, 4 in that order.
    pub tscm: Vec<TscmTrace>,
    /// Final map at full resolution.
    pub s2: Var,
    pub s3: Var,
    /// Half resolution.
    pub s4: Var,
    /// Pre-sigmoid values of `[s2, s3, s4]`.
    pub logits: [Var; 3],
}

pub(crate) fn conv<T: Real>(
    g: &mut Graph<T>,
    p: &Bindings,
    name: &str,
    x: Var,
    spec: Conv2dSpec,
) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), spec)?)
}

/// 3×3, padding 1, ReLU.
pub(crate) fn conv3_relu<T: Real>(g: &mut Graph<T>, p: &Bindings, name: &str, x: Var) -> Result<Var> {
    let y = conv(g, p, name, x, Conv2dSpec::padded(1))?;
    Ok(g.relu(y)?)
}

pub(crate) fn conv1<T: Real>(g: &mut Graph<T>, p: &Bindings, name: &str, x: Var) -> Result<Var> {
    conv(g, p, name, x, Conv2dSpec::default())
}

pub(crate) fn pad(top: usize, bottom: usize, left: usize, right: usize) -> Padding {
    Padding { top, bottom, left, right }
}

/// Inverted dropout with a deterministic mask.
pub(crate) fn dropout<T: Real>(g: &mut Graph<T>, x: Var, rate: f64, mode: Mode, name: &str) -> Result<Var> {
    let Mode::Train { seed } = mode else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    let keep = T::lit(1.0 / (1.0 - rate));
    let dims = g.dims(x).to_vec();
    let mask = Tensor::from_fn(dims, |_| if rng.random::<f64>() < rate { T::zero() } else { keep });
    let m = g.constant(mask);
    Ok(g.mul(x, m)?)
}

/// Adds a normalised copy of a `3×S×S` image in `[0, 1]` to the graph.
pub fn input<T: Real>(g: &mut Graph<T>, image: &Tensor<f32>) -> Result<Var> {
    let x = g.constant(image.cast());
    Ok(g.affine(x, 1.0 / INPUT_STD, -INPUT_MEAN / INPUT_STD)?)
}

/// Runs the network on an already-normalised input.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bindings,
    cfg: &ModelConfig,
    x: Var,
    mode: Mode,
) -> Result<Outputs> {
    let s = cfg.size;
    if g.dims(x) != [3, s, s] {
        return Err(Error::Config(format!("model expects 3×{s}×{s} input, got {:?}", g.dims(x))));
    }
    let features = backbone::extract_features(g, p, cfg, x)?;
    let mut tscm = Vec::with_capacity(3);
    for level in 2..=4 {
        tscm.push(tscm::tscm_forward(g, p, cfg, &features, level)?);
    }
    let logits = decoder::decode(g, p, cfg, [tscm[0].f_ts, tscm[1].f_ts, tscm[2].f_ts], mode)?;
    let [s2, s3, s4] = [g.sigmoid(logits[0])?, g.sigmoid(logits[1])?, g.sigmoid(logits[2])?];
    Ok(Outputs { features, tscm, s2, s3, s4, logits })
}
