//! Synthetic nested-structure dataset, normalisation, augmentation,
//! labeled/unlabeled splitting and PGM-backed dataset directories.

mod pgm;
mod split;
mod store;
mod synth;
mod transform;

use crate::error::{shape_err, Result};
use crate::numcore::Tensor;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, PgmGrid};
pub use split::{split, DatasetSplit, SplitIds};
pub use store::{load_dataset, quantize, save_dataset, Dataset, Manifest};
pub use synth::{generate_synthetic, SynthConfig, BACKGROUND, LV, MYO, RV};
pub use transform::{augment, normalize, Normalization, Transform};

/// One image with an optional one-hot mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, H, W]`.
    pub image: Tensor,
    /// `[C, H, W]` one-hot.
    pub mask: Option<Tensor>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Option<Tensor>) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 1 {
            return shape_err(format!("image must be [1, H, W], got {s:?}"));
        }
        if !image.is_finite() {
            return shape_err("image contains non-finite values");
        }
        if let Some(m) = &mask {
            let ms = m.shape();
            if ms.len() != 3 || ms[1..] != s[1..] {
                return shape_err(format!("mask {ms:?} does not match image {s:?}"));
            }
            labels_from_one_hot(m)?;
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }

    /// Class index per pixel, if a mask is present.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.mask.as_ref().map(|m| labels_from_one_hot(m).expect("validated mask"))
    }
}

/// `[C, H, W]` one-hot tensor from per-pixel class indices.
pub fn one_hot(labels: &[usize], classes: usize, h: usize, w: usize) -> Result<Tensor> {
    if labels.len() != h * w {
        return shape_err(format!("{} labels for a {h}x{w} grid", labels.len()));
    }
    let mut data = vec![0.0; classes * h * w];
    for (p, &c) in labels.iter().enumerate() {
        if c >= classes {
            return shape_err(format!("label {c} out of range for {classes} classes"));
        }
        data[c * h * w + p] = 1.0;
    }
    Tensor::new(&[classes, h, w], data)
}

/// Inverse of [`one_hot`]; rejects anything that is not exactly one-hot.
pub fn labels_from_one_hot(mask: &Tensor) -> Result<Vec<usize>> {
    let s = mask.shape();
    if s.len() != 3 {
        return shape_err(format!("mask must be [C, H, W], got {s:?}"));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let d = mask.data();
    let mut out = Vec::with_capacity(hw);
    for p in 0..hw {
        let mut label = None;
        for ch in 0..c {
            match d[ch * hw + p] {
                0.0 => {}
                1.0 if label.is_none() => label = Some(ch),
                _ => return shape_err(format!("mask is not one-hot at pixel {p}")),
            }
        }
        match label {
            Some(l) => out.push(l),
            None => return shape_err(format!("mask is not one-hot at pixel {p}")),
        }
    }
    Ok(out)
}
