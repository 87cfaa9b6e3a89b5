//! AdamW with decoupled weight decay and the warmup + cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VsaError};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};

/// Batch size the base learning rate refers to.
pub const LR_REFERENCE_BATCH: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig::pretrain()
    }
}

impl OptimConfig {
    pub fn pretrain() -> Self {
        OptimConfig {
            base_lr: 1.5e-4,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            batch_size: 160,
            warmup_epochs: 40,
            total_epochs: 200,
        }
    }

    pub fn finetune() -> Self {
        OptimConfig {
            base_lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 160,
            warmup_epochs: 5,
            total_epochs: 100,
        }
    }

    pub fn probe() -> Self {
        OptimConfig { batch_size: 320, ..OptimConfig::finetune() }
    }

    /// Peak learning rate under the linear scaling rule.
    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / LR_REFERENCE_BATCH
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VsaError::Config(m.to_string()));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Learning rate per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(cfg: &OptimConfig, steps_per_epoch: u64) -> Self {
        let total_steps = cfg.total_epochs as u64 * steps_per_epoch;
        Schedule {
            peak: cfg.peak_lr(),
            warmup_steps: (cfg.warmup_epochs as u64 * steps_per_epoch).min(total_steps),
            total_steps,
        }
    }

    /// Linear ramp from 0 over the warmup, then a half cosine down to 0 at
    /// `total_steps`; 0 beyond.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let t = (step - self.warmup_steps) as f64 / span;
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

pub fn lr_at(step: u64, cfg: &OptimConfig, steps_per_epoch: u64) -> f64 {
    Schedule::new(cfg, steps_per_epoch).lr_at(step)
}

/// Weight decay applies to matrices and tables only, not to biases and
/// layer-norm affines.
pub fn decays(t_shape: &[usize]) -> bool {
    t_shape.len() >= 2
}

/// AdamW state for every tensor of one [`ParamStore`]. Tensors that are not
/// trainable keep zero moments and are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Float> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub trainable: Vec<bool>,
    pub steps: u64,
}

impl<T: Float> AdamW<T> {
    pub fn new(store: &ParamStore<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect::<Vec<_>>();
        AdamW { m: zeros(), v: zeros(), trainable: store.iter().map(|(n, _)| trainable(n)).collect(), steps: 0 }
    }

    /// One update. `grads[i]` is the gradient of parameter `i`; `None` for a
    /// trainable parameter means it received no gradient this step and is
    /// treated as zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64, cfg: &OptimConfig) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(VsaError::shape(format!(
                "{} gradients and {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if !self.trainable[i] {
                continue;
            }
            let w = store.get_mut(id);
            if let Some(g) = &grads[i] {
                if g.shape() != w.shape() {
                    return Err(VsaError::shape(format!(
                        "gradient {:?} for parameter {:?}",
                        g.shape(),
                        w.shape()
                    )));
                }
            }
            let wd = if decays(w.shape()) { cfg.weight_decay } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].as_ref().map(Tensor::data);
            for (k, wk) in w.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k].as_f64());
                let mk = cfg.beta1 * m[k].as_f64() + (1.0 - cfg.beta1) * gk;
                let vk = cfg.beta2 * v[k].as_f64() + (1.0 - cfg.beta2) * gk * gk;
                m[k] = T::c(mk);
                v[k] = T::c(vk);
                let wf = wk.as_f64();
                let update = (mk / bc1) / ((vk / bc2).sqrt() + cfg.eps) + wd * wf;
                *wk = T::c(wf - lr * update);
            }
        }
        Ok(())
    }
}
