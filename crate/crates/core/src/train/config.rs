use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum LrPolicy {
    Constant,
    /// `base_lr · gamma^⌊iteration / step_size⌋`.
    Step { step_size: usize, gamma: f64 },
}

impl Default for LrPolicy {
    fn default() -> Self {
        LrPolicy::Constant
    }
}

/// Optimizer and loop settings. Every field has a default, so a JSON file
/// need only list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub lr_policy: LrPolicy,
    pub weight_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub snapshot_every: usize,
    /// Emit a log line every this many iterations; 0 disables.
    pub log_every: usize,
    /// Parameters whose name starts with any of these prefixes are not
    /// updated.
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            momentum: 0.9,
            max_iterations: 1000,
            batch_size: 32,
            lr_policy: LrPolicy::Constant,
            weight_decay: 0.0002,
            seed: 0,
            snapshot_every: 0,
            log_every: 10,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be finite and non-negative", self.base_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be finite and non-negative", self.weight_decay));
        }
        if let LrPolicy::Step { step_size, gamma } = self.lr_policy {
            if step_size == 0 || !(gamma > 0.0 && gamma.is_finite()) {
                return bad(format!("step policy needs step_size ≥ 1 and gamma > 0, got {step_size}, {gamma}"));
            }
        }
        Ok(())
    }

    pub fn is_frozen(&self, param: &str) -> bool {
        self.freeze.iter().any(|p| param.starts_with(p.as_str()))
    }
}

/// Learning rate used at 0-based `iteration`.
pub fn lr_at(config: &TrainConfig, iteration: usize) -> f64 {
    match config.lr_policy {
        LrPolicy::Constant => config.base_lr,
        LrPolicy::Step { step_size, gamma } => config.base_lr * gamma.powi((iteration / step_size) as i32),
    }
}
