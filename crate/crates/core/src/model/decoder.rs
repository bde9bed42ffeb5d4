//! Saliency-prediction blocks SP4 → SP3 → SP2 with two lateral heads.

use tscnet_tensor::{Graph, Real, Var};

use super::{conv1, conv3_relu, dropout, Mode};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Bindings, SpecList};

pub fn specs(cfg: &ModelConfig, list: &mut SpecList) {
    let c = cfg.channels;
    for i in [4, 3] {
        list.conv(&format!("sp.{i}.conv1"), c, c, 3, 3);
        list.conv(&format!("sp.{i}.conv2"), c, c, 3, 3);
        list.deconv(&format!("sp.{i}.deconv"), c, c);
        list.conv(&format!("sp.{i}.side"), 1, c, 1, 1);
    }
    list.conv("sp.2.conv1", c, c, 3, 3);
    list.conv("sp.2.conv2", c, c, 3, 3);
    list.conv("sp.2.conv3", 1, c, 3, 3);
}

/// Two convs, dropout and a ×2 deconv. Returns `(upsampled, lateral logits)`.
fn basic_block<T: Real>(
    g: &mut Graph<T>,
    p: &Bindings,
    cfg: &ModelConfig,
    i: usize,
    x: Var,
    mode: Mode,
) -> Result<(Var, Var)> {
    let x = conv3_relu(g, p, &format!("sp.{i}.conv1"), x)?;
    let x = conv3_relu(g, p, &format!("sp.{i}.conv2"), x)?;
    let x = dropout(g, x, cfg.dropout, mode, &format!("sp.{i}.dropout"))?;
    let w = p.var(&format!("sp.{i}.deconv.weight"))?;
    let b = p.var(&format!("sp.{i}.deconv.bias"))?;
    let up = g.deconv2d(x, w, Some(b), 2, 1)?;
    let side = conv1(g, p, &format!("sp.{i}.side"), up)?;
    Ok((up, side))
}

fn fuse<T: Real>(g: &mut Graph<T>, a: Var, b: Var, level: usize) -> Result<Var> {
    if g.dims(a) != g.dims(b) {
        return Err(Error::Tensor(tscnet_tensor::TensorError::Contract {
            op: "decode",
            msg: format!("SP{level} input {:?} does not match TSCM output {:?}", g.dims(a), g.dims(b)),
        }));
    }
    Ok(g.add(a, b)?)
}

/// `f_ts = [f²ₜₛ, f³ₜₛ, f⁴ₜₛ]`. Returns the pre-sigmoid logits of
/// `[S², S³, S⁴]`.
pub fn decode<T: Real>(
    g: &mut Graph<T>,
    p: &Bindings,
    cfg: &ModelConfig,
    f_ts: [Var; 3],
    mode: Mode,
) -> Result<[Var; 3]> {
    let (x4, s4) = basic_block(g, p, cfg, 4, f_ts[2], mode)?;
    let x = fuse(g, x4, f_ts[1], 3)?;
    let (x3, s3) = basic_block(g, p, cfg, 3, x, mode)?;
    let x = fuse(g, x3, f_ts[0], 2)?;
    let x = conv3_relu(g, p, "sp.2.conv1", x)?;
    let x = conv3_relu(g, p, "sp.2.conv2", x)?;
    let s2 = conv3_linear(g, p, "sp.2.conv3", x)?;
    Ok([s2, s3, s4])
}

fn conv3_linear<T: Real>(g: &mut Graph<T>, p: &Bindings, name: &str, x: Var) -> Result<Var> {
    super::conv(g, p, name, x, tscnet_tensor::Conv2dSpec::padded(1))
}
