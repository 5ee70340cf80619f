use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token-indexed learning-rate schedule and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub peak_lr: f64,
    pub warmup_tokens: u64,
    pub decay_tokens: u64,
    pub max_tokens: u64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_clip() -> f64 {
    1.0
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

impl TrainSchedule {
    pub fn new(peak_lr: f64, warmup_tokens: u64, decay_tokens: u64, max_tokens: u64) -> Self {
        TrainSchedule {
            peak_lr,
            warmup_tokens,
            decay_tokens,
            max_tokens,
            weight_decay: 0.0,
            clip_norm: default_clip(),
            betas: default_betas(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::config("schedule.peak_lr", "must be positive"));
        }
        if self.warmup_tokens >= self.decay_tokens {
            return Err(Error::config(
                "schedule.warmup_tokens",
                format!("{} is not below decay_tokens {}", self.warmup_tokens, self.decay_tokens),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("schedule.clip_norm", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("schedule.weight_decay", "must be nonnegative"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("schedule.betas", "both must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("schedule.eps", "must be positive"));
        }
        if self.max_tokens == 0 {
            return Err(Error::config("schedule.max_tokens", "must be positive"));
        }
        Ok(())
    }

    /// Linear warmup from zero, cosine decay to zero at `decay_tokens`,
    /// zero afterwards.
    pub fn lr_at(&self, tokens: u64) -> f64 {
        let peak = self.peak_lr;
        if tokens < self.warmup_tokens {
            return peak * tokens as f64 / self.warmup_tokens as f64;
        }
        if tokens >= self.decay_tokens {
            return 0.0;
        }
        let progress = (tokens - self.warmup_tokens) as f64 / (self.decay_tokens - self.warmup_tokens) as f64;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos())
    }
}
