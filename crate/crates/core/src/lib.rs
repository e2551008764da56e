//! Semi-supervised 2D segmentation with patch confidence adversarial
//! training, built on a small deterministic autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: tensors, the gradient tape and seeded random streams.
//! * [`networks`]: the U-Net style segmenter and the image/patch/pixel
//!   discriminators, plus their receptive-field and output-size geometry.
//! * [`objectives`]: segmentation, adversarial, feature-matching and IPM
//!   losses, and the conditioning operators that feed the discriminator.
//! * [`data`]: a synthetic nested-structure dataset, PGM I/O and splits.
//! * [`trainer`]: the alternating discriminator/segmenter optimisation loop.
//! * [`metrics`]: DSC, Jaccard, 95% Hausdorff and average surface distance.
//! * [`harness`]: experiment plans, result tables, SVG plots and the CLI.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod networks;
pub mod numcore;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
