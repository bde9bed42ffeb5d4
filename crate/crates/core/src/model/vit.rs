//! Pre-norm transformer over a fixed `G×G` grid of 1×1 patches, shared by
//! all TSCM levels.

use tscnet_tensor::{Graph, Real, Var};

use super::conv1;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::params::{Bindings, Init, SpecList};

const PREFIX: &str = "tscm.shared_vit";
const LN_EPS: f64 = 1e-5;

pub fn specs(cfg: &ModelConfig, list: &mut SpecList) {
    let d = cfg.channels;
    let n = cfg.grid * cfg.grid;
    list.conv(&format!("{PREFIX}.patch_embed"), d, d, 1, 1);
    list.push(format!("{PREFIX}.pos_embed"), vec![n, d], Init::Normal { std: 0.02 });
    for l in 0..cfg.vit_layers {
        let pre = format!("{PREFIX}.layer{l}");
        list.layer_norm(&format!("{pre}.norm1"), d);
        for p in ["q", "k", "v", "proj"] {
            list.token_linear(&format!("{pre}.attn.{p}"), d, d);
        }
        list.layer_norm(&format!("{pre}.norm2"), d);
        list.token_linear(&format!("{pre}.mlp.fc1"), d, cfg.mlp_ratio * d);
        list.token_linear(&format!("{pre}.mlp.fc2"), cfg.mlp_ratio * d, d);
    }
    list.layer_norm(&format!("{PREFIX}.norm"), d);
    list.token_linear(&format!("{PREFIX}.head"), d, d);
}

fn token_linear<T: Real>(g: &mut Graph<T>, p: &Bindings, name: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.var(&format!("{name}.weight"))?)?;
    Ok(g.add(y, p.var(&format!("{name}.bias"))?)?)
}

fn layer_norm<T: Real>(g: &mut Graph<T>, p: &Bindings, name: &str, x: Var) -> Result<Var> {
    let gamma = p.var(&format!("{name}.gamma"))?;
    let beta = p.var(&format!("{name}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
}

/// Maps a `c×G×G` grid to a `c×G×G` grid.
pub fn forward<T: Real>(g: &mut Graph<T>, p: &Bindings, cfg: &ModelConfig, grid: Var) -> Result<Var> {
    let (c, gh, gw) = (g.dims(grid)[0], g.dims(grid)[1], g.dims(grid)[2]);
    let n = gh * gw;
    let x = conv1(g, p, &format!("{PREFIX}.patch_embed"), grid)?;
    let x = g.reshape(x, &[c, n])?;
    let x = g.transpose(x)?;
    let mut t = g.add(x, p.var(&format!("{PREFIX}.pos_embed"))?)?;
    for l in 0..cfg.vit_layers {
        let pre = format!("{PREFIX}.layer{l}");
        let y = layer_norm(g, p, &format!("{pre}.norm1"), t)?;
        let q = token_linear(g, p, &format!("{pre}.attn.q"), y)?;
        let k = token_linear(g, p, &format!("{pre}.attn.k"), y)?;
        let v = token_linear(g, p, &format!("{pre}.attn.v"), y)?;
        let a = g.multi_head_attention(q, k, v, cfg.vit_heads)?;
        let a = token_linear(g, p, &format!("{pre}.attn.proj"), a)?;
        t = g.add(t, a)?;
        let y = layer_norm(g, p, &format!("{pre}.norm2"), t)?;
        let y = token_linear(g, p, &format!("{pre}.mlp.fc1"), y)?;
        let y = g.gelu(y)?;
        let y = token_linear(g, p, &format!("{pre}.mlp.fc2"), y)?;
        t = g.add(t, y)?;
    }
    let t = layer_norm(g, p, &format!("{PREFIX}.norm"), t)?;
    let t = token_linear(g, p, &format!("{PREFIX}.head"), t)?;
    let t = g.transpose(t)?;
    Ok(g.reshape(t, &[c, gh, gw])?)
}
