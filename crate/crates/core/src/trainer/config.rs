use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// One learning rate per third of the run.
    pub learning_rates: [f64; 3],
    pub seed: u64,
    pub saturate_in_training: bool,
    pub optimizer: OptimizerKind,
    /// Scale applied to final-layer sums before the softmax.
    pub temperature: f64,
    /// Samples per gradient work unit; fixes the reduction order.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rates: [1e-3, 5e-4, 1e-4],
            seed: 0,
            saturate_in_training: true,
            optimizer: OptimizerKind::Adam,
            temperature: 0.25,
            chunk_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk size must be at least 1".into()));
        }
        if self
            .learning_rates
            .iter()
            .any(|&lr| !(lr > 0.0 && lr.is_finite()))
        {
            return Err(Error::Config(format!(
                "learning rates must be positive, got {:?}",
                self.learning_rates
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Stage `k` covers epochs `[k * epochs / 3, (k + 1) * epochs / 3)` (0-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let stage = (epoch * 3 / self.epochs).min(2);
        self.learning_rates[stage]
    }

    /// The A-H learning-rate combinations of the published sensitivity grid.
    pub fn named_schedule(name: char) -> Option<[f64; 3]> {
        Some(match name.to_ascii_uppercase() {
            'A' => [1e-3, 1e-3, 1e-3],
            'B' => [1e-3, 5e-4, 2e-4],
            'C' => [1e-3, 5e-4, 1e-4],
            'D' => [1e-3, 2e-4, 1e-4],
            'E' => [5e-4, 5e-4, 5e-4],
            'F' => [5e-4, 2e-4, 1e-4],
            'G' => [2e-4, 2e-4, 2e-4],
            'H' => [1e-4, 1e-4, 1e-4],
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirds_schedule() {
        let cfg = TrainConfig {
            epochs: 9,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..9).map(|e| cfg.learning_rate(e)).collect();
        assert_eq!(
            lrs,
            vec![1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 1e-4, 1e-4, 1e-4]
        );
        let one = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert_eq!(one.learning_rate(0), 1e-3);
        let two = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        assert_eq!((two.learning_rate(0), two.learning_rate(1)), (1e-3, 5e-4));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rates: [1e-3, 0.0, 1e-4],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(TrainConfig::named_schedule('f'), Some([5e-4, 2e-4, 1e-4]));
        assert_eq!(TrainConfig::named_schedule('z'), None);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "seed": 9}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 256);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }
}
