//! Scheduled loss normalization.
//!
//! Each loss channel keeps an exponentially-weighted moving average of its
//! *squared* raw values. On scheduled iterations (counter mod period == 1,
//! counting from 1, so the very first iteration is scheduled) the raw value
//! is divided by that average plus a small epsilon; on all other iterations
//! it passes through unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moving-average state for one loss channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlnState {
    /// EWMA of squared raw values; starts at zero.
    pub accumulator: f64,
    /// Decay rate beta in (0, 1).
    pub decay: f64,
    /// Stabilizer added to the denominator.
    pub epsilon: f64,
    /// Normalization fires when `iteration mod period == 1`.
    pub period: u64,
    /// Iterations observed so far.
    pub iteration: u64,
}

/// Result of advancing the state by one raw observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlnStep {
    /// Value to optimize this iteration.
    pub effective: f64,
    /// Multiplier applied to the raw value (1 on pass-through iterations).
    pub factor: f64,
    /// Whether normalization fired.
    pub scheduled: bool,
}

impl SlnState {
    pub fn new(decay: f64, epsilon: f64, period: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) || decay == 0.0 {
            return Err(Error::Validation(format!(
                "SLN decay must be in (0, 1), got {decay}"
            )));
        }
        if period == 0 {
            return Err(Error::Validation("SLN period must be positive".into()));
        }
        Ok(SlnState {
            accumulator: 0.0,
            decay,
            epsilon,
            period,
            iteration: 0,
        })
    }

    /// Paper defaults: beta 0.99, epsilon 1e-10, period 200.
    pub fn default_params() -> Self {
        Self::new(0.99, 1e-10, 200).expect("defaults are valid")
    }

    /// Advances the moving average with `raw` and returns the effective
    /// value. `raw` must be nonnegative (losses are).
    pub fn step(&mut self, raw: f64) -> Result<SlnStep> {
        if raw < 0.0 || !raw.is_finite() {
            return Err(Error::Validation(format!(
                "SLN expects finite nonnegative raw losses, got {raw}"
            )));
        }
        self.iteration += 1;
        self.accumulator = self.decay * self.accumulator + (1.0 - self.decay) * raw * raw;
        let scheduled = self.iteration % self.period == 1 || self.period == 1;
        let factor = if scheduled {
            1.0 / (self.accumulator + self.epsilon)
        } else {
            1.0
        };
        Ok(SlnStep {
            effective: raw * factor,
            factor,
            scheduled,
        })
    }
}
