use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub plateau_factor: f64,
    /// Epochs without a validation improvement of `early_stop_delta` before
    /// the learning rate is cut.
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub early_stop_delta: f64,
    /// Once the learning rate is below this, two consecutive plateau events
    /// end training.
    pub min_learning_rate: f64,
    pub patch_size: usize,
    pub overlap: f64,
    pub architecture: Architecture,
    /// Binarization threshold recorded in the checkpoints for inference.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 3,
            max_epochs: 50,
            batch_size: 128,
            train_fraction: 0.8,
            seed: 0,
            early_stop_delta: 1e-5,
            min_learning_rate: 1e-6,
            patch_size: 48,
            overlap: 0.5,
            architecture: Architecture::CANONICAL,
            threshold: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("min_learning_rate", self.min_learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(alloc::format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.early_stop_delta >= 0.0) {
            return Err(Error::invalid("early_stop_delta must be >= 0"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau_factor must lie in (0, 1)"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1)"));
        }
        if self.plateau_patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "plateau_patience, max_epochs and batch_size must be >= 1",
            ));
        }
        if self.patch_size == 0 || self.patch_size > crate::data::MAX_PATCH {
            return Err(Error::invalid(alloc::format!(
                "patch_size must lie in 1..={}",
                crate::data::MAX_PATCH
            )));
        }
        if !(0.5..=0.75).contains(&self.overlap) {
            return Err(Error::invalid("overlap must lie in [0.5, 0.75]"));
        }
        if self.architecture.width == 0 {
            return Err(Error::invalid("architecture width must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Seed of the BCNN initializer; the SCNN and the two data splits use
    /// their own offsets so the phases draw independent streams.
    pub(crate) fn phase_seed(&self, phase: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(phase)
    }
}
