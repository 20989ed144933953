//! Adam with decoupled weight decay and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Clip the global gradient norm to this value; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 0.0,
        }
    }
}

/// Optimizer state. Moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// What a single step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Update the named parameters in place. Names without a gradient get a
    /// zero one, so weight decay still applies to them. Decay is applied to
    /// the weights directly, `θ ← θ − lr·wd·θ`, not through the moments.
    pub fn step(&mut self, store: &mut ParamStore, names: &[String], grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<StepInfo> {
        let mut gs = Vec::with_capacity(names.len());
        let mut sq = 0.0;
        for name in names {
            let p = store
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
            let g = grads.get(name).cloned().unwrap_or_else(|| Tensor::zeros(p.raw_dim()));
            sq += g.iter().map(|x| x * x).sum::<f64>();
            gs.push(g);
        }
        let grad_norm = sq.sqrt();
        let clipped = self.cfg.grad_clip > 0.0 && grad_norm > self.cfg.grad_clip;
        let scale = if clipped { self.cfg.grad_clip / grad_norm } else { 1.0 };

        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, mut g) in names.iter().zip(gs) {
            let p = store.get_mut(name).expect("checked above");
            if scale != 1.0 {
                g.mapv_inplace(|x| x * scale);
            }
            if self.cfg.weight_decay != 0.0 {
                let keep = 1.0 - lr * self.cfg.weight_decay;
                p.mapv_inplace(|v| v * keep);
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.dim()));
            ndarray::Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.cfg.eps);
                });
        }
        Ok(StepInfo { grad_norm, clipped })
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.m.clear();
        self.v.clear();
    }
}
