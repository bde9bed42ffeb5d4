//! Texture-semantic collaboration: position anchoring (PAU), texture
//! rendering (TRU) and region interaction (RIU) for levels 2, 3 and 4.

use tscnet_tensor::{Conv2dSpec, Graph, Real, Var};

use super::backbone::FeatureSet;
use super::{conv, conv1, conv3_relu, pad, vit};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Bindings, Init, SpecList};

/// Kernel length of multi-scale branch `j` (1-based).
pub fn branch_kernel(j: usize) -> usize {
    2 * j - 1
}

/// Conv specs of multi-scale branch `j`: `[1×1]` for `j = 1`, otherwise
/// `[1×k, k×1, 3×3 dilated by k]`, each as `(kh, kw, spec)`.
pub fn branch_schedule(j: usize) -> Vec<(usize, usize, Conv2dSpec)> {
    let k = branch_kernel(j);
    if j == 1 {
        return vec![(1, 1, Conv2dSpec::default())];
    }
    let r = (k - 1) / 2;
    vec![
        (1, k, Conv2dSpec { padding: pad(0, 0, r, r), ..Default::default() }),
        (k, 1, Conv2dSpec { padding: pad(r, r, 0, 0), ..Default::default() }),
        (3, 3, Conv2dSpec::padded(k).with_dilation(k)),
    ]
}

const BRANCH_CONVS: [&str; 3] = ["conv1xk", "convkx1", "dilated"];

pub fn specs(cfg: &ModelConfig, list: &mut SpecList) {
    let c = cfg.channels;
    let u = cfg.units;
    for i in 2..=4 {
        if u.pau {
            list.fc(&format!("tscm.{i}.pau.fc_r"), c, 2 * c);
            list.fc(&format!("tscm.{i}.pau.fc_s"), c, c);
            list.conv(&format!("tscm.{i}.pau.spatial"), 1, 2, 7, 7);
        }
        if u.tru {
            for p in ["q", "k", "v"] {
                list.conv(&format!("tscm.{i}.tru.{p}"), c, c, 1, 1);
            }
            list.push(format!("tscm.{i}.tru.beta"), vec![1], Init::Zeros);
        }
        if u.riu {
            list.conv(&format!("tscm.{i}.msp.branch1"), c, c, 1, 1);
            for j in 2..=4 {
                for ((kh, kw, _), n) in branch_schedule(j).into_iter().zip(BRANCH_CONVS) {
                    list.conv(&format!("tscm.{i}.msp.branch{j}.{n}"), c, c, kh, kw);
                }
            }
            list.conv(&format!("tscm.{i}.msp.fuse"), c, 4 * c, 1, 1);
        }
        let fuse_in = if u.riu { 2 * c } else { c };
        list.conv(&format!("tscm.{i}.fuse"), c, fuse_in, 3, 3);
    }
    if u.riu {
        vit::specs(cfg, list);
    }
}

/// Intermediate maps of one TSCM level. Disabled units leave `None` or
/// pass their input through.
#[derive(Debug, Clone)]
pub struct TscmTrace {
    pub level: usize,
    /// Channel attention vector, `c`.
    pub channel_attn: Option<Var>,
    /// Spatial attention map at level resolution, `1×h×w`.
    pub spatial_attn: Option<Var>,
    pub f_jca: Option<Var>,
    pub f_pau: Var,
    pub f_sp: Option<Var>,
    pub f_tru: Var,
    pub branches: Vec<Var>,
    pub f_riu: Option<Var>,
    pub f_ts: Var,
}

pub struct PauOut {
    pub channel_attn: Var,
    pub spatial_attn: Var,
    pub f_jca: Var,
    pub f_pau: Var,
}

/// Position anchoring: joint channel attention from both global
/// descriptors, spatial attention from the semantic level, residual fuse.
pub fn pau<T: Real>(g: &mut Graph<T>, p: &Bindings, level: usize, f_b: Var, f_s: Var) -> Result<PauOut> {
    let (c, h, w) = g.value(f_b).chw().ok_or_else(|| contract("pau", "f_b must be C×H×W"))?;
    if g.value(f_s).chw().map(|d| d.0) != Some(c) {
        return Err(contract("pau", &format!("f_b has {c} channels, f_s has dims {:?}", g.dims(f_s))));
    }
    let name = |s: &str| format!("tscm.{level}.pau.{s}");
    let gb = g.global_avg(f_b)?;
    let gs = g.global_avg(f_s)?;
    let joint = g.concat(&[gb, gs])?;
    let joint = g.reshape(joint, &[2 * c])?;
    let hidden = g.linear(joint, p.var(&name("fc_r.weight"))?, Some(p.var(&name("fc_r.bias"))?))?;
    let hidden = g.relu(hidden)?;
    let a = g.linear(hidden, p.var(&name("fc_s.weight"))?, Some(p.var(&name("fc_s.bias"))?))?;
    let channel_attn = g.sigmoid(a)?;
    let gate = g.reshape(channel_attn, &[c, 1, 1])?;
    let f_jca = g.mul(f_b, gate)?;

    let avg = g.channel_mean(f_s)?;
    let max = g.channel_max(f_s)?;
    let pooled = g.concat(&[avg, max])?;
    let sa = conv(g, p, &name("spatial"), pooled, Conv2dSpec::padded(3))?;
    let sa = g.sigmoid(sa)?;
    let spatial_attn = g.bilinear_up(sa, h, w)?;
    let gated = g.mul(f_jca, spatial_attn)?;
    let f_pau = g.add(f_b, gated)?;
    Ok(PauOut { channel_attn, spatial_attn, f_jca, f_pau })
}

/// Texture rendering: ×2 super-resolution of `f_pau` refined by
/// channel-wise attention with queries from the texture level.
/// Returns `(f_sp, f_tru)`.
pub fn tru<T: Real>(g: &mut Graph<T>, p: &Bindings, level: usize, f_pau: Var, f_t: Var) -> Result<(Var, Var)> {
    let (_, h, w) = g.value(f_pau).chw().ok_or_else(|| contract("tru", "f_pau must be C×H×W"))?;
    let (_, th, tw) = g.value(f_t).chw().ok_or_else(|| contract("tru", "f_t must be C×H×W"))?;
    if th < 2 * h || tw < 2 * w {
        return Err(contract("tru", &format!("texture level {th}×{tw} smaller than 2×{h}×{w}")));
    }
    let name = |s: &str| format!("tscm.{level}.tru.{s}");
    let up = g.bilinear_up(f_pau, 2 * h, 2 * w)?;
    let tex = g.adaptive_avg(f_t, 2 * h, 2 * w)?;
    let q = conv1(g, p, &name("q"), tex)?;
    let k = conv1(g, p, &name("k"), up)?;
    let v = conv1(g, p, &name("v"), up)?;
    let f_sp = g.channelwise_attention(q, k, v)?;
    let scaled = g.mul(f_sp, p.var(&name("beta"))?)?;
    let f_tru = g.add(up, scaled)?;
    Ok((f_sp, f_tru))
}

/// The four multi-scale branches and their 1×1 fusion. Returns
/// `(branches, f_msp)`.
pub fn multi_scale<T: Real>(g: &mut Graph<T>, p: &Bindings, level: usize, f_in: Var) -> Result<(Vec<Var>, Var)> {
    let mut branches = Vec::with_capacity(4);
    for j in 1..=4 {
        let mut x = f_in;
        for (n, (_, _, spec)) in branch_schedule(j).into_iter().enumerate() {
            let layer = if j == 1 {
                format!("tscm.{level}.msp.branch1")
            } else {
                format!("tscm.{level}.msp.branch{j}.{}", BRANCH_CONVS[n])
            };
            x = conv(g, p, &layer, x, spec)?;
        }
        branches.push(x);
    }
    let cat = g.concat(&branches)?;
    let f_msp = conv1(g, p, &format!("tscm.{level}.msp.fuse"), cat)?;
    Ok((branches, f_msp))
}

/// Region interaction: multi-scale perception, fixed-grid transformer,
/// ×2 upsampling. Returns `(branches, f_riu)`.
pub fn riu<T: Real>(
    g: &mut Graph<T>,
    p: &Bindings,
    cfg: &ModelConfig,
    level: usize,
    f_in: Var,
) -> Result<(Vec<Var>, Var)> {
    let (_, h, w) = g.value(f_in).chw().ok_or_else(|| contract("riu", "f_in must be C×H×W"))?;
    if cfg.grid > h.min(w) {
        return Err(Error::Config(format!("grid {} exceeds level {level} size {h}×{w}", cfg.grid)));
    }
    let (branches, f_msp) = multi_scale(g, p, level, f_in)?;
    let pooled = g.adaptive_avg(f_msp, cfg.grid, cfg.grid)?;
    let tokens = vit::forward(g, p, cfg, pooled)?;
    let f_riu = g.bilinear_up(tokens, 2 * h, 2 * w)?;
    Ok((branches, f_riu))
}

pub fn tscm_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bindings,
    cfg: &ModelConfig,
    feats: &FeatureSet,
    level: usize,
) -> Result<TscmTrace> {
    let (f_b, f_t, f_s) = (feats.level(level), feats.level(1), feats.level(5));
    let u = cfg.units;
    let mut trace = TscmTrace {
        level,
        channel_attn: None,
        spatial_attn: None,
        f_jca: None,
        f_pau: f_b,
        f_sp: None,
        f_tru: f_b,
        branches: Vec::new(),
        f_riu: None,
        f_ts: f_b,
    };
    if u.pau {
        let out = pau(g, p, level, f_b, f_s)?;
        trace.channel_attn = Some(out.channel_attn);
        trace.spatial_attn = Some(out.spatial_attn);
        trace.f_jca = Some(out.f_jca);
        trace.f_pau = out.f_pau;
    }
    if u.tru {
        let (f_sp, f_tru) = tru(g, p, level, trace.f_pau, f_t)?;
        trace.f_sp = Some(f_sp);
        trace.f_tru = f_tru;
    } else {
        let (_, h, w) = g.value(trace.f_pau).chw().expect("checked by backbone");
        trace.f_tru = g.bilinear_up(trace.f_pau, 2 * h, 2 * w)?;
    }
    let fuse_in = if u.riu {
        let f_in = match trace.f_jca {
            Some(jca) => g.add(jca, f_b)?,
            None => f_b,
        };
        let (branches, f_riu) = riu(g, p, cfg, level, f_in)?;
        trace.branches = branches;
        trace.f_riu = Some(f_riu);
        g.concat(&[trace.f_tru, f_riu])?
    } else {
        trace.f_tru
    };
    trace.f_ts = conv3_relu(g, p, &format!("tscm.{level}.fuse"), fuse_in)?;
    Ok(trace)
}

fn contract(op: &'static str, msg: &str) -> Error {
    Error::Tensor(tscnet_tensor::TensorError::Contract { op, msg: msg.to_string() })
}
