//! Model, training and run configuration, plus the `key = value` file format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which TSCM units are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Units {
    pub pau: bool,
    pub tru: bool,
    pub riu: bool,
}

impl Units {
    pub const FULL: Units = Units { pau: true, tru: true, riu: true };
    pub const BASELINE: Units = Units { pau: false, tru: false, riu: false };

    /// The five ablation rows: baseline, +PAU, +PAU+TRU, +PAU+RIU, full.
    pub fn ablation_rows() -> [(&'static str, Units); 5] {
        [
            ("baseline", Units::BASELINE),
            ("pau", Units { pau: true, tru: false, riu: false }),
            ("pau+tru", Units { pau: true, tru: true, riu: false }),
            ("pau+riu", Units { pau: true, tru: false, riu: true }),
            ("full", Units::FULL),
        ]
    }
}

impl Default for Units {
    fn default() -> Self {
        Units::FULL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Square input side; must be divisible by 16.
    pub size: usize,
    pub widths: [usize; 5],
    pub convs: [usize; 5],
    /// Width of every compressed feature level.
    pub channels: usize,
    /// Side of the region-interaction token grid.
    pub grid: usize,
    pub vit_layers: usize,
    pub vit_heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub units: Units,
}

impl ModelConfig {
    /// Full-size VGG-16 layout at 256×256.
    pub fn full() -> Self {
        Self {
            size: 256,
            widths: [64, 128, 256, 512, 512],
            convs: [2, 2, 3, 3, 3],
            channels: 32,
            grid: 32,
            vit_layers: 2,
            vit_heads: 4,
            mlp_ratio: 2,
            dropout: 0.1,
            units: Units::FULL,
        }
    }

    /// Laptop-scale layout at 64×64.
    pub fn desk() -> Self {
        Self {
            size: 64,
            widths: [8, 16, 32, 64, 64],
            convs: [1; 5],
            channels: 16,
            grid: 8,
            vit_layers: 2,
            vit_heads: 4,
            mlp_ratio: 2,
            dropout: 0.1,
            units: Units::FULL,
        }
    }

    /// Smallest layout, used for finite-difference checks.
    pub fn micro() -> Self {
        Self {
            size: 32,
            widths: [4; 5],
            convs: [1; 5],
            channels: 4,
            grid: 4,
            vit_layers: 1,
            vit_heads: 2,
            mlp_ratio: 2,
            dropout: 0.1,
            units: Units::FULL,
        }
    }

    /// Desk widths at another input size, grid kept at `size / 8`.
    pub fn desk_at(size: usize) -> Self {
        Self { size, grid: size / 8, ..Self::desk() }
    }

    pub fn with_units(mut self, units: Units) -> Self {
        self.units = units;
        self
    }

    /// Spatial side of backbone level `i` (1-based).
    pub fn level_size(&self, i: usize) -> usize {
        self.size >> (i - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size == 0 || self.size % 16 != 0 {
            return bad(format!("input size {} is not a positive multiple of 16", self.size));
        }
        if self.widths.contains(&0) || self.convs.contains(&0) || self.channels == 0 {
            return bad("widths, convs and channels must be positive".into());
        }
        if self.units.riu {
            if self.grid == 0 || self.grid > self.level_size(4) {
                return bad(format!(
                    "grid {} must lie in 1..={} (level-4 side)",
                    self.grid,
                    self.level_size(4)
                ));
            }
            if self.vit_layers == 0 || self.vit_heads == 0 || self.mlp_ratio == 0 {
                return bad("vit_layers, vit_heads and mlp_ratio must be positive".into());
            }
            if self.channels % self.vit_heads != 0 {
                return bad(format!(
                    "channels {} not divisible by vit_heads {}",
                    self.channels, self.vit_heads
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Images accumulated per optimizer step.
    pub batch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub augment: bool,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch: 4,
            epochs: 70,
            max_steps: None,
            decay_every: 30,
            decay_factor: 0.1,
            augment: true,
            checkpoint_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect during (0-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        // Dividing by an exact power of ten keeps `lr_at(30) == lr / 10`.
        self.lr / self.decay_factor.recip().powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything a CLI run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn parse_five(key: &str, value: &str) -> Result<[usize; 5]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("{key} needs exactly five comma-separated values")))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "preset" => {
                let units = m.units;
                *m = match value {
                    "desk" => ModelConfig::desk(),
                    "micro" => ModelConfig::micro(),
                    "full" => ModelConfig::full(),
                    _ => return Err(Error::Config(format!("unknown preset {value:?}"))),
                };
                m.units = units;
            }
            "size" => m.size = parse(key, value)?,
            "widths" => m.widths = parse_five(key, value)?,
            "convs" => m.convs = parse_five(key, value)?,
            "channels" => m.channels = parse(key, value)?,
            "grid" => m.grid = parse(key, value)?,
            "vit_layers" => m.vit_layers = parse(key, value)?,
            "vit_heads" => m.vit_heads = parse(key, value)?,
            "mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "pau" => m.units.pau = parse_bool(key, value)?,
            "tru" => m.units.tru = parse_bool(key, value)?,
            "riu" => m.units.riu = parse_bool(key, value)?,
            "units" => {
                m.units = Units::ablation_rows()
                    .into_iter()
                    .find(|(name, _)| *name == value)
                    .map(|(_, u)| u)
                    .ok_or_else(|| Error::Config(format!("unknown units row {value:?}")))?
            }
            "lr" => t.lr = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "max_steps" => t.max_steps = Some(parse(key, value)?),
            "decay_every" => t.decay_every = parse(key, value)?,
            "decay_factor" => t.decay_factor = parse(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "manifest" => self.manifest = Some(value.into()),
            "out_dir" => self.out_dir = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Serialises to the same `key = value` format.
    pub fn to_kv(&self) -> BTreeMap<&'static str, String> {
        let (m, t) = (&self.model, &self.train);
        let five = |a: &[usize; 5]| a.map(|v| v.to_string()).join(",");
        let mut kv = BTreeMap::from([
            ("size", m.size.to_string()),
            ("widths", five(&m.widths)),
            ("convs", five(&m.convs)),
            ("channels", m.channels.to_string()),
            ("grid", m.grid.to_string()),
            ("vit_layers", m.vit_layers.to_string()),
            ("vit_heads", m.vit_heads.to_string()),
            ("mlp_ratio", m.mlp_ratio.to_string()),
            ("dropout", m.dropout.to_string()),
            ("pau", m.units.pau.to_string()),
            ("tru", m.units.tru.to_string()),
            ("riu", m.units.riu.to_string()),
            ("lr", t.lr.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("batch", t.batch.to_string()),
            ("epochs", t.epochs.to_string()),
            ("decay_every", t.decay_every.to_string()),
            ("decay_factor", t.decay_factor.to_string()),
            ("augment", t.augment.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("seed", t.seed.to_string()),
        ]);
        if let Some(s) = t.max_steps {
            kv.insert("max_steps", s.to_string());
        }
        for (k, p) in [("manifest", &self.manifest), ("out_dir", &self.out_dir), ("checkpoint", &self.checkpoint)] {
            if let Some(p) = p {
                kv.insert(k, p.display().to_string());
            }
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}
