use crate::error::{Error, Result};

/// Optimizer, schedule and augmentation settings for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// First epoch (0-based) that uses `lr_final`.
    pub lr_drop_epoch: usize,
    pub augment: bool,
    pub seed: u64,
}

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MOMENTUM: f64 = 0.95;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_LR_INITIAL: f64 = 1e-3;
pub const DEFAULT_LR_FINAL: f64 = 1e-4;
/// Length of the low-learning-rate tail.
pub const LR_TAIL_EPOCHS: usize = 20;

impl TrainConfig {
    /// Defaults for `epochs` epochs, with the rate dropping for the last 20.
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            lr_initial: DEFAULT_LR_INITIAL,
            lr_final: DEFAULT_LR_FINAL,
            lr_drop_epoch: epochs.saturating_sub(LR_TAIL_EPOCHS),
            augment: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::invalid(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(self.lr_initial >= 0.0 && self.lr_final >= 0.0) || !(self.lr_initial.is_finite() && self.lr_final.is_finite()) {
            return Err(Error::invalid("learning rates must be finite and >= 0"));
        }
        if self.lr_drop_epoch > self.epochs {
            return Err(Error::invalid(format!(
                "lr_drop_epoch {} exceeds epochs {}",
                self.lr_drop_epoch, self.epochs
            )));
        }
        Ok(())
    }
}

pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_drop_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_final
    }
}
