//! Adaptive return normalization for the value head.
//!
//! Running first and second moments of the return targets give a shift
//! `mu` and a clamped scale `sigma`; the value head predicts normalized
//! values and its output layer is rescaled on every moment update so that
//! unnormalized predictions are preserved.

use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalerConfig {
    pub step_size: f64,
    pub scale_lower: f64,
    pub scale_upper: f64,
}

impl Default for ScalerConfig {
    fn default() -> Self {
        Self { step_size: 1e-3, scale_lower: 1e-2, scale_upper: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnScaler {
    pub config: ScalerConfig,
    pub mu: f64,
    /// Running second moment.
    pub nu: f64,
}

impl ReturnScaler {
    pub fn new(config: ScalerConfig) -> Self {
        Self { config, mu: 0.0, nu: 1.0 }
    }

    pub fn sigma(&self) -> f64 {
        (self.nu - self.mu * self.mu).max(0.0).sqrt().clamp(self.config.scale_lower, self.config.scale_upper)
    }

    pub fn normalize(&self, g: f64) -> f64 {
        (g - self.mu) / self.sigma()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.mu + self.sigma() * v
    }

    /// Folds in a batch of targets. Returns `(old_mu, old_sigma)` so the
    /// caller can preserve outputs with [`ReturnScaler::rescale`].
    pub fn update(&mut self, targets: &[f64]) -> (f64, f64) {
        let old = (self.mu, self.sigma());
        if targets.is_empty() {
            return old;
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let sq = targets.iter().map(|g| g * g).sum::<f64>() / n;
        let beta = self.config.step_size;
        self.mu = (1.0 - beta) * self.mu + beta * mean;
        self.nu = (1.0 - beta) * self.nu + beta * sq;
        old
    }

    /// Adjusts a linear output layer `(w, b)` so that
    /// `denormalize(w x + b)` is unchanged by the last [`update`](Self::update).
    pub fn rescale(&self, old: (f64, f64), w: &mut [f64], b: &mut f64) {
        let (old_mu, old_sigma) = old;
        let sigma = self.sigma();
        for wi in w.iter_mut() {
            *wi *= old_sigma / sigma;
        }
        *b = (old_sigma * *b + old_mu - self.mu) / sigma;
    }
}
