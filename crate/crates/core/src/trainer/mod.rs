//! Alternating discriminator/segmenter optimisation with polynomial
//! learning-rate decay, CSV logging, checkpoints and inference helpers.

mod engine;
mod log;
mod optim;
mod predict;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{config_err, Error, Result};
use crate::networks::{ConvLayer, DiscriminatorSpec, SegmenterSpec};
use crate::objectives::LossWeights;

pub use engine::{disc_step, sample_batch, seg_step, train, StepTerms, TrainOutcome};
pub use log::{LogRow, TrainingLog, LOG_HEADER};
pub use optim::{Adam, Sgd};
pub use predict::{argmax_labels, binarize, evaluate_normalized, evaluate_samples, predict, predict_batch, Prediction};

/// `lr0 * (1 - iter / total)^power`.
pub fn poly_lr(lr0: f64, iter: usize, total: usize, power: f64) -> Result<f64> {
    if iter > total {
        return Err(Error::Usage(format!("iteration {iter} beyond schedule length {total}")));
    }
    if total == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * (1.0 - iter as f64 / total as f64).powf(power))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iterations: usize,
    /// Even; half labeled, half unlabeled.
    pub batch_size: usize,
    pub seg_lr0: f64,
    pub disc_lr0: f64,
    pub lr_decay_power: f64,
    pub momentum: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    /// Write `ckpt_<iter>.bin` this often; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub segmenter: SegmenterSpec,
    /// Overrides the discriminator's default layer stack.
    pub disc_layers: Option<Vec<ConvLayer>>,
    pub normalization: Normalization,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 2000,
            batch_size: 8,
            seg_lr0: 1e-2,
            disc_lr0: 1e-4,
            lr_decay_power: 0.9,
            momentum: 0.9,
            seed: 1,
            weights: LossWeights::default(),
            eval_every: 100,
            checkpoint_every: 0,
            segmenter: SegmenterSpec::default(),
            disc_layers: None,
            normalization: Normalization::UnitRange,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return config_err(format!("batch size must be even and >= 2, got {}", self.batch_size));
        }
        if !(self.seg_lr0 > 0.0 && self.disc_lr0 > 0.0) {
            return config_err("learning rates must be positive");
        }
        if !(self.lr_decay_power >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return config_err("decay power must be >= 0 and momentum in [0, 1)");
        }
        if self.eval_every == 0 {
            return config_err("eval_every must be positive");
        }
        self.weights.validate()?;
        self.segmenter.validate()?;
        self.disc_spec().validate()
    }

    pub fn disc_spec(&self) -> DiscriminatorSpec {
        let channels = self.weights.conditioning.disc_channels(self.segmenter.num_classes);
        let mut spec = DiscriminatorSpec::for_granularity(self.weights.granularity, channels);
        if let Some(layers) = &self.disc_layers {
            spec.layers = layers.clone();
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_lr_examples() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100, 0.9).unwrap(), 0.0);
        let half = poly_lr(1.0, 50, 100, 0.9).unwrap();
        assert!((half - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((half - 0.535887).abs() < 1e-6);
        assert!(poly_lr(0.01, 101, 100, 0.9).is_err());
        let lrs: Vec<f64> = (0..=100).map(|i| poly_lr(0.01, i, 100, 0.9).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let odd = TrainConfig {
            batch_size: 5,
            ..TrainConfig::default()
        };
        assert!(odd.validate().is_err());
        let json = r#"{"total_iterations": 3, "weights": {"lambda_adv": 0.0}}"#;
        let cfg: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.total_iterations, 3);
        assert_eq!(cfg.weights.lambda_fea, 1.0);
    }
}
