//! Named parameter storage, deterministic initialisation and graph bindings.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tscnet_tensor::{Graph, Real, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    He { fan_in: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

/// Collects parameter specs under a name prefix.
#[derive(Debug, Default)]
pub struct SpecList {
    pub specs: Vec<ParamSpec>,
}

impl SpecList {
    pub fn push(&mut self, name: String, dims: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec { name, dims, init });
    }

    /// `{name}.weight` (`co×ci×kh×kw`) and `{name}.bias`.
    pub fn conv(&mut self, name: &str, co: usize, ci: usize, kh: usize, kw: usize) {
        self.push(format!("{name}.weight"), vec![co, ci, kh, kw], Init::He { fan_in: ci * kh * kw });
        self.push(format!("{name}.bias"), vec![co], Init::Zeros);
    }

    /// Stride-2, 4×4 transposed conv stored as `ci×co×4×4`. Each output
    /// pixel receives `ci·4` taps.
    pub fn deconv(&mut self, name: &str, ci: usize, co: usize) {
        self.push(format!("{name}.weight"), vec![ci, co, 4, 4], Init::He { fan_in: ci * 4 });
        self.push(format!("{name}.bias"), vec![co], Init::Zeros);
    }

    /// Matrix-vector layer `y = W x + b` with `W: out×in`.
    pub fn fc(&mut self, name: &str, out: usize, inp: usize) {
        self.push(format!("{name}.weight"), vec![out, inp], Init::He { fan_in: inp });
        self.push(format!("{name}.bias"), vec![out], Init::Zeros);
    }

    /// Token layer `Y = X W + b` with `W: in×out`.
    pub fn token_linear(&mut self, name: &str, inp: usize, out: usize) {
        self.push(format!("{name}.weight"), vec![inp, out], Init::He { fan_in: inp });
        self.push(format!("{name}.bias"), vec![out], Init::Zeros);
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) {
        self.push(format!("{name}.gamma"), vec![d], Init::Ones);
        self.push(format!("{name}.beta"), vec![d], Init::Zeros);
    }
}

/// Every parameter of the network described by `cfg`, in model order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut list = SpecList::default();
    model::backbone::specs(cfg, &mut list);
    model::tscm::specs(cfg, &mut list);
    model::decoder::specs(cfg, &mut list);
    list.specs
}

pub(crate) fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the seed bytes followed by the name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn sample(spec: &ParamSpec, seed: u64) -> Tensor<f32> {
    let n: usize = spec.dims.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &spec.name));
    let normal = |std: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
        let d = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| d.sample(rng) as f32).collect()
    };
    let data = match spec.init {
        Init::He { fan_in } => normal((2.0 / fan_in as f64).sqrt(), &mut rng),
        Init::Normal { std } => normal(std, &mut rng),
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
    };
    Tensor::new(spec.dims.clone(), data).expect("spec dims are valid")
}

/// All learnable tensors of a model, keyed by hierarchical name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self { map: BTreeMap::new() }
    }
}

impl ParamStore<f32> {
    /// Fresh parameters; every tensor draws from its own stream seeded by
    /// `(seed, name)`, so adding or removing units leaves the rest unchanged.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let map = param_specs(cfg).iter().map(|s| (s.name.clone(), sample(s, seed))).collect();
        Ok(Self { map })
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Option<Tensor<T>> {
        self.map.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    /// Adds every tensor to `g` as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bindings {
        Bindings { map: self.map.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect() }
    }

    /// Adds every tensor to `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bindings {
        Bindings { map: self.map.iter().map(|(k, v)| (k.clone(), g.constant(v.clone()))).collect() }
    }

    /// Checks names and dims against `cfg`, listing every difference.
    pub fn check_matches(&self, cfg: &ModelConfig) -> Result<()> {
        let expected: BTreeMap<String, Vec<usize>> =
            param_specs(cfg).into_iter().map(|s| (s.name, s.dims)).collect();
        let mut diff = Vec::new();
        for (name, dims) in &expected {
            match self.map.get(name) {
                None => diff.push(format!("missing {name} {dims:?}")),
                Some(t) if t.dims() != dims.as_slice() => {
                    diff.push(format!("{name}: have {:?}, expected {dims:?}", t.dims()))
                }
                _ => {}
            }
        }
        for (name, t) in &self.map {
            if !expected.contains_key(name) {
                diff.push(format!("unexpected {name} {:?}", t.dims()));
            }
        }
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "parameters do not match the model configuration:\n  {}",
                diff.join("\n  ")
            )))
        }
    }
}

/// Map from parameter name to its leaf in one graph.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    map: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { map: pairs.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("model has no parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
