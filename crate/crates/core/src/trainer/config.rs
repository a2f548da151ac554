use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::loss::{check_prototype_capacity, LossHooks, NegativeCounts, DEFAULT_LAMBDA};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Pctl,
    #[serde(alias = "target-only")]
    TargetOnly,
    #[serde(alias = "fine-tune")]
    FineTune,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Pctl => "pctl",
            Mode::TargetOnly => "target-only",
            Mode::FineTune => "fine-tune",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pctl" => Ok(Mode::Pctl),
            "target-only" | "target_only" => Ok(Mode::TargetOnly),
            "fine-tune" | "fine_tune" => Ok(Mode::FineTune),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected pctl, target-only or fine-tune)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// `λ`.
    pub lambda: f64,
    /// Instance negatives `r`.
    pub r: usize,
    /// Prototype negatives `r′`.
    pub r_prime: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            r: 32,
            r_prime: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// `k^(1), …, k^(M)`.
    pub k_schedule: Vec<usize>,
    /// Target mean of the concentration factors.
    pub tau_prime: f64,
    pub alpha: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_schedule: vec![64],
            tau_prime: 0.2,
            alpha: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    /// Learning rate of the encoder body.
    pub body_lr: f64,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            body_lr: 8e-5,
            momentum: 0.9,
        }
    }
}

impl OptimConfig {
    /// Ten times the default rates. The defaults assume a large pretrained
    /// body; the small MLP trained from scratch on synthetic data needs
    /// bigger steps to converge within a few dozen epochs.
    pub fn desk_scale() -> Self {
        Self {
            lr: 8e-3,
            body_lr: 8e-4,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub epochs: usize,
    /// Source-only epochs before fine-tuning.
    pub pretrain_epochs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pctl,
            batch_size: 64,
            epochs: 30,
            pretrain_epochs: 30,
            seed: 0,
        }
    }
}

/// Everything a training run depends on besides the dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub cluster: ClusterConfig,
    pub optim: OptimConfig,
    pub train: RunConfig,
    /// Test switches; never read from or written to config files.
    #[serde(skip)]
    pub hooks: LossHooks,
}

impl TrainConfig {
    pub fn negative_counts(&self) -> NegativeCounts {
        NegativeCounts {
            instance: self.loss.r,
            prototype: self.loss.r_prime,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let l = &self.loss;
        if !(l.lambda >= 0.0 && l.lambda.is_finite()) {
            return Err(Error::Config(format!("loss.lambda = {} must be finite and >= 0", l.lambda)));
        }
        let c = &self.cluster;
        if c.k_schedule.is_empty() {
            return Err(Error::Config("cluster.k_schedule must not be empty".into()));
        }
        if self.train.mode == Mode::Pctl {
            check_prototype_capacity(&c.k_schedule, l.r_prime)?;
        }
        for (name, v) in [("cluster.tau_prime", c.tau_prime), ("cluster.alpha", c.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        let o = &self.optim;
        for (name, v) in [("optim.lr", o.lr), ("optim.body_lr", o.body_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!("optim.momentum = {} must lie in [0, 1)", o.momentum)));
        }
        if self.train.batch_size < 2 {
            return Err(Error::Config(format!(
                "train.batch_size = {}: instance negatives need at least 2 samples per batch",
                self.train.batch_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.loss.lambda, 1.0 / 32.0);
        assert_eq!((c.loss.r, c.loss.r_prime), (32, 32));
        assert_eq!(c.cluster.k_schedule, vec![64]);
        assert_eq!((c.cluster.tau_prime, c.cluster.alpha), (0.2, 10.0));
        assert_eq!((c.optim.lr, c.optim.body_lr, c.optim.momentum), (8e-4, 8e-5, 0.9));
        assert_eq!((c.train.batch_size, c.train.epochs), (64, 30));
        c.validate().unwrap();
    }

    #[test]
    fn k_below_minimum_rejected() {
        let mut c = TrainConfig::default();
        c.cluster.k_schedule = vec![32];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("at least r' + 1 = 33"), "{err}");
    }
}
