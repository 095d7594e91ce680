use serde::{Deserialize, Serialize};

use super::TrainError;

pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_SPLITS: [f64; 3] = [0.5, 0.25, 0.25];

/// Optimization and data-split settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    /// Train, validation and test fractions.
    pub splits: [f64; 3],
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH,
            max_epochs: DEFAULT_EPOCHS,
            patience: DEFAULT_PATIENCE,
            splits: DEFAULT_SPLITS,
            lr: crate::engine::DEFAULT_LR,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        if self.splits.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(TrainError::Config(format!("split fractions {:?} outside [0, 1]", self.splits)));
        }
        let total: f64 = self.splits.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TrainError::Config(format!("split fractions sum to {total}, not 1")));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        Ok(())
    }
}
