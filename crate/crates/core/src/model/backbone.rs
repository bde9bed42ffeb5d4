//! Five-block VGG-style feature extractor with per-block 1×1 compression.

use tscnet_tensor::{Graph, Real, Var};

use super::{conv1, conv3_relu};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::params::SpecList;

/// Compressed features of the five blocks: `levels[0]` is the texture
/// level at full resolution, `levels[4]` the semantic level at 1/16.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSet {
    pub levels: [Var; 5],
}

impl FeatureSet {
    /// Level `i`, 1-based.
    pub fn level(&self, i: usize) -> Var {
        self.levels[i - 1]
    }
}

pub fn specs(cfg: &ModelConfig, list: &mut SpecList) {
    let mut prev = 3;
    for i in 1..=5 {
        let width = cfg.widths[i - 1];
        for j in 1..=cfg.convs[i - 1] {
            list.conv(&format!("fe.block{i}.conv{j}"), width, prev, 3, 3);
            prev = width;
        }
        list.conv(&format!("fe.compress{i}"), cfg.channels, width, 1, 1);
    }
}

pub fn extract_features<T: Real>(
    g: &mut Graph<T>,
    p: &crate::params::Bindings,
    cfg: &ModelConfig,
    image: Var,
) -> Result<FeatureSet> {
    cfg.validate()?;
    let mut x = image;
    let mut levels = [image; 5];
    for i in 1..=5 {
        if i > 1 {
            x = g.max_pool2(x)?;
        }
        for j in 1..=cfg.convs[i - 1] {
            x = conv3_relu(g, p, &format!("fe.block{i}.conv{j}"), x)?;
        }
        let f = conv1(g, p, &format!("fe.compress{i}"), x)?;
        levels[i - 1] = g.relu(f)?;
    }
    Ok(FeatureSet { levels })
}
