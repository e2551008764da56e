//! Loss terms and discriminator input conditioning.
//!
//! Every function here records onto a caller-supplied tape and returns the
//! resulting scalar [`Var`](crate::numcore::Var). Which parameters receive
//! gradients is decided by how the caller bound them: the segmenter
//! objective refuses a trainable discriminator and vice versa.

mod composite;
mod conditioning;
mod losses;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::networks::Granularity;

pub use composite::{disc_objective, total_seg_loss, BatchPair, SegObjective};
pub use conditioning::{condition, pixel_additive_blend, Conditioning};
pub use losses::{
    bce_loss, dice_loss, disc_loss, feature_matching_loss, gen_adv_loss, ipm_loss, ipm_loss_mean,
    multiclass_dice_loss, seg_loss, DICE_EPS, LOG_FLOOR,
};

/// Which discriminator activations feed the feature-matching and IPM terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Activations entering the final conv layer.
    #[default]
    Penultimate,
    /// The confidence map itself.
    Confidence,
}

/// How the IPM term reduces the squared centre difference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmReduction {
    /// Squared L2 norm, summed over feature elements.
    Sum,
    /// Sum divided by the feature elements per sample, matching the
    /// mean-squared feature-matching term.
    #[default]
    Mean,
}

/// Loss weights and the discriminator configuration they apply to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_fea: f64,
    pub lambda_ipm: f64,
    pub lambda_noise: f64,
    pub conditioning: Conditioning,
    pub granularity: Granularity,
    pub feature_source: FeatureSource,
    pub ipm_reduction: IpmReduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 0.1,
            lambda_fea: 1.0,
            lambda_ipm: 0.1,
            lambda_noise: 0.001,
            conditioning: Conditioning::Blend,
            granularity: Granularity::Patch,
            feature_source: FeatureSource::Penultimate,
            ipm_reduction: IpmReduction::Mean,
        }
    }
}

impl LossWeights {
    /// Supervised baseline: every adversarial weight zero, raw maps.
    pub fn supervised() -> Self {
        Self {
            lambda_adv: 0.0,
            lambda_fea: 0.0,
            lambda_ipm: 0.0,
            conditioning: Conditioning::None,
            ..Self::default()
        }
    }

    /// True when no adversarial term contributes, so the discriminator is
    /// never consulted.
    pub fn is_supervised(&self) -> bool {
        self.lambda_adv == 0.0 && self.lambda_fea == 0.0 && self.lambda_ipm == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_fea, self.lambda_ipm, self.lambda_noise];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return config_err(format!("loss weights must be finite and >= 0, got {all:?}"));
        }
        Ok(())
    }
}
