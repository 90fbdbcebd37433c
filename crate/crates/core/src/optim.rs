//! SGD with momentum and the warmup + cosine-annealing schedule.

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight_decay {} must be >= 0",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// SGD-with-momentum state: one velocity buffer per parameter, aligned to
/// the store's definition order and initialized to zero.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, params: &ParamStore) -> Result<Sgd> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: params.iter().map(|p| Tensor::zeros(p.value().shape())).collect(),
        })
    }

    /// One update: for each non-frozen parameter
    /// `v <- momentum*v + g + weight_decay*p; p <- p - lr*v`, then all
    /// gradients are zeroed. Frozen parameters and their velocities are
    /// untouched.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if self.velocity.len() != params.len() {
            return Err(Error::shape(
                "sgd_step",
                format!(
                    "{} velocity buffers for {} parameters",
                    self.velocity.len(),
                    params.len()
                ),
            ));
        }
        let wd = self.cfg.weight_decay;
        let m = self.cfg.momentum;
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if p.frozen() {
                continue;
            }
            let (value, grad) = p.value_and_grad_mut();
            for i in 0..value.numel() {
                let g = grad.data()[i] + wd * value.data()[i];
                let vel = m * v.data()[i] + g;
                v.data_mut()[i] = vel;
                value.data_mut()[i] -= lr * vel;
            }
        }
        params.zero_grads();
        Ok(())
    }
}

/// Learning-rate schedule: `warmup_epochs` at `lr_init`, then cosine
/// annealing from `lr_max` down to `lr_min` over the remaining epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub lr_init: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr_init: 1e-5,
            lr_max: 1e-4,
            lr_min: 1e-6,
            warmup_epochs: 1,
            total_epochs: 10,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min <= self.lr_init && self.lr_init <= self.lr_max) {
            return Err(Error::InvalidConfig(format!(
                "require lr_min <= lr_init <= lr_max, got {} / {} / {}",
                self.lr_min, self.lr_init, self.lr_max
            )));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} must be < total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch index.
///
/// Epochs up to `warmup_epochs` hold `lr_init`; afterwards
/// `lr_min + (lr_max - lr_min)/2 * (1 + cos(pi * t))` with
/// `t = (epoch - warmup - 1)/(total - warmup - 1)`, so the first
/// post-warmup epoch sits at `lr_max` and the last at `lr_min`.
pub fn lr_at_epoch(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if epoch < 1 || epoch > cfg.total_epochs {
        return Err(Error::InvalidConfig(format!(
            "epoch {epoch} outside 1..={}",
            cfg.total_epochs
        )));
    }
    if epoch <= cfg.warmup_epochs {
        return Ok(cfg.lr_init);
    }
    let span = cfg.total_epochs - cfg.warmup_epochs - 1;
    if span == 0 {
        // single post-warmup epoch: cosine argument 0
        return Ok(cfg.lr_max);
    }
    let t = (epoch - cfg.warmup_epochs - 1) as f64 / span as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}
