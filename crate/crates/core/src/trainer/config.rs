//! Training hyperparameters, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::LearningRates;
use super::densify::DensifyConfig;
use super::loss::LossConfig;
use crate::error::{Error, Result};
use crate::event::ContrastThresholds;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub positive: f64,
    pub negative: f64,
    /// Optimize both thresholds jointly with the scene.
    pub learn: bool,
    pub learning_rate: f64,
    /// Learned thresholds never drop below this.
    pub min: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            positive: 0.25,
            negative: 0.25,
            learn: false,
            learning_rate: 1e-3,
            min: 1e-3,
        }
    }
}

impl ThresholdConfig {
    pub fn initial(&self) -> Result<ContrastThresholds> {
        ContrastThresholds::new(self.positive, self.negative).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Event-count fractions bounding the sampled window length.
    pub window_min_frac: f64,
    pub window_max_frac: f64,
    /// Iterations between SH degree increments; 0 starts at full degree.
    pub sh_warmup_interval: usize,
    /// Steps over which the position rate decays; defaults to `iterations`.
    pub position_lr_steps: Option<usize>,
    pub near: f64,
    pub rates: LearningRates,
    pub loss: LossConfig,
    pub densify: DensifyConfig,
    pub thresholds: ThresholdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 40_000,
            seed: 0,
            window_min_frac: 0.01,
            window_max_frac: 0.10,
            sh_warmup_interval: 1000,
            position_lr_steps: None,
            near: crate::scene::project::DEFAULT_NEAR,
            rates: LearningRates::default(),
            loss: LossConfig::default(),
            densify: DensifyConfig::default(),
            thresholds: ThresholdConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for small simulated scenes: 3000 iterations.
    pub fn desk() -> Self {
        Self::desk_with(3000)
    }

    /// Small-scene defaults with the density schedule scaled to
    /// `iterations`: refinement over the first half, one opacity reset.
    pub fn desk_with(iterations: usize) -> Self {
        Self {
            iterations,
            densify: DensifyConfig {
                grad_threshold: 0.002,
                start_iteration: iterations / 6,
                stop_iteration: iterations / 2,
                interval: (iterations / 30).max(1),
                opacity_reset_interval: (iterations / 3).max(1),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_min_frac > 0.0
            && self.window_min_frac <= self.window_max_frac
            && self.window_max_frac <= 1.0)
        {
            return Err(Error::Config(format!(
                "window fractions must satisfy 0 < min <= max <= 1, got ({}, {})",
                self.window_min_frac, self.window_max_frac
            )));
        }
        if !(self.near > 0.0 && self.near.is_finite()) {
            return Err(Error::Config(format!("near plane must be positive, got {}", self.near)));
        }
        let t = &self.thresholds;
        if !(t.learning_rate >= 0.0 && t.min > 0.0) {
            return Err(Error::Config(format!("invalid threshold settings: {t:?}")));
        }
        self.thresholds.initial()?;
        self.rates.validate()?;
        self.loss.validate()?;
        self.densify.validate()
    }

    pub fn position_steps(&self) -> usize {
        self.position_lr_steps.unwrap_or(self.iterations)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = TrainConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.rates.opacity, 0.01);
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = TrainConfig::from_toml("iterations = 7\n[loss]\nlambda = 0.5\n").unwrap();
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.loss.lambda, 0.5);
        assert_eq!(cfg.loss.ssim_window, 11);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "[loss]\nlambda = 1.5\n",
            "window_min_frac = 0.5\nwindow_max_frac = 0.1\n",
            "unknown_key = 1\n",
            "[densify]\nsplit_factor = -1.0\n",
        ] {
            assert!(matches!(TrainConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
