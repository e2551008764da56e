use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::Result;
use crate::numcore::{RngStream, Tensor};

/// Per-image intensity normalisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// min -> 0, max -> 1.
    #[default]
    UnitRange,
    /// Zero mean, unit standard deviation.
    Zscore,
}

/// Normalises the image of `sample`. Returns `true` alongside the result when
/// the image was constant, in which case it is mapped to zeros (and a warning
/// is logged under `Zscore`).
pub fn normalize(sample: &Sample, mode: Normalization) -> (Sample, bool) {
    let d = sample.image.data();
    let n = d.len() as f64;
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let constant = lo == hi;
    let mapped: Vec<f64> = match mode {
        Normalization::None => d.to_vec(),
        _ if constant => {
            if mode == Normalization::Zscore {
                log::warn!("sample {} is constant; zscore leaves zeros", sample.id);
            }
            vec![0.0; d.len()]
        }
        Normalization::UnitRange => d.iter().map(|v| (v - lo) / (hi - lo)).collect(),
        Normalization::Zscore => {
            let mean = d.iter().sum::<f64>() / n;
            let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            d.iter().map(|v| (v - mean) / sd).collect()
        }
    };
    let mut out = sample.clone();
    out.image = Tensor::new(sample.image.shape(), mapped).expect("same shape");
    (out, constant && mode != Normalization::None)
}

/// A rigid square-grid transform: optional horizontal and vertical flips
/// followed by `quarter_turns` counter-clockwise 90 degree rotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub fn sample(rng: &mut RngStream) -> Self {
        let quarter_turns = rng.below(4) as u8;
        let flip_h = rng.below(2) == 1;
        let flip_v = rng.below(2) == 1;
        Self {
            flip_h,
            flip_v,
            quarter_turns,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Source pixel `(y, x)` for destination `(y, x)` in an `n x n` grid.
    fn source(&self, n: usize, y: usize, x: usize) -> (usize, usize) {
        let (mut y, mut x) = (y, x);
        // undo rotations: destination (y, x) of a CCW turn came from (x, n-1-y)
        for _ in 0..self.quarter_turns % 4 {
            (y, x) = (x, n - 1 - y);
        }
        if self.flip_h {
            x = n - 1 - x;
        }
        if self.flip_v {
            y = n - 1 - y;
        }
        (y, x)
    }

    fn inverse_source(&self, n: usize, y: usize, x: usize) -> (usize, usize) {
        let (mut y, mut x) = (y, x);
        if self.flip_v {
            y = n - 1 - y;
        }
        if self.flip_h {
            x = n - 1 - x;
        }
        for _ in 0..self.quarter_turns % 4 {
            (y, x) = (n - 1 - x, y);
        }
        (y, x)
    }

    fn remap(t: &Tensor, f: impl Fn(usize, usize) -> (usize, usize)) -> Tensor {
        let s = t.shape();
        let n = s[1];
        let src = t.data();
        Tensor::from_fn(s, |i| {
            let (ch, p) = (i / (n * n), i % (n * n));
            let (sy, sx) = f(p / n, p % n);
            src[ch * n * n + sy * n + sx]
        })
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let n = sample.hw().0;
        self.map(sample, |y, x| self.source(n, y, x))
    }

    /// Undoes [`Transform::apply`].
    pub fn invert(&self, sample: &Sample) -> Sample {
        let n = sample.hw().0;
        self.map(sample, |y, x| self.inverse_source(n, y, x))
    }

    fn map(&self, sample: &Sample, f: impl Fn(usize, usize) -> (usize, usize) + Copy) -> Sample {
        Sample {
            id: sample.id.clone(),
            image: Self::remap(&sample.image, f),
            mask: sample.mask.as_ref().map(|m| Self::remap(m, f)),
        }
    }
}

/// Applies a uniformly drawn rotation/flip identically to image and mask.
pub fn augment(sample: &Sample, rng: &mut RngStream) -> Result<(Sample, Transform)> {
    let (h, w) = sample.hw();
    if h != w {
        return crate::error::shape_err(format!("augment needs square images, got {h}x{w}"));
    }
    let t = Transform::sample(rng);
    Ok((t.apply(sample), t))
}
