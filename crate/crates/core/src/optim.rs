//! Adam over a [`ParamStore`].

use std::collections::BTreeMap;

use tscnet_tensor::Tensor;

use crate::config::TrainConfig;
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// One bias-corrected update. Parameters without a gradient entry are
    /// left unchanged.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f64>>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; p.numel()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; p.numel()]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *pi = (f64::from(*pi) - update) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![3], vec![1.0f32, 1.0, 1.0]).unwrap());
        let g = BTreeMap::from([("w".to_string(), Tensor::new(vec![3], vec![0.5, -2.0, 0.0]).unwrap())]);
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut p, &g, 0.01);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] - 1.01).abs() < 1e-6);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![2], vec![3.0f32, -4.0]).unwrap());
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().data().to_vec();
            let g = Tensor::new(vec![2], x.iter().map(|&v| 2.0 * f64::from(v)).collect()).unwrap();
            adam.step(&mut p, &BTreeMap::from([("x".to_string(), g)]), 0.05);
        }
        assert!(p.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }
}
