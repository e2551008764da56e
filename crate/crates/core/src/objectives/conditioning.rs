use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::numcore::{RngStream, Tape, Tensor, Var};

/// How the input image is combined with a segmentation map before the
/// discriminator sees it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The map alone.
    None,
    /// `map + lambda_noise * image * noise`, fresh Gaussian noise per call.
    #[default]
    Blend,
    /// The image appended as an extra channel.
    Concat,
    /// The map multiplied by the image, channel by channel.
    Multiply,
}

impl Conditioning {
    /// Discriminator input channels for a `classes`-channel map.
    pub fn disc_channels(self, classes: usize) -> usize {
        match self {
            Conditioning::Concat => classes + 1,
            _ => classes,
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Conditioning::None => "none",
            Conditioning::Blend => "blend",
            Conditioning::Concat => "concat",
            Conditioning::Multiply => "multiply",
        })
    }
}

impl FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Conditioning::None),
            "blend" => Ok(Conditioning::Blend),
            "concat" => Ok(Conditioning::Concat),
            "multiply" => Ok(Conditioning::Multiply),
            other => config_err(format!("unknown conditioning {other:?}")),
        }
    }
}

/// Repeats a `[B, 1, H, W]` image across `channels` channels, or checks that
/// a multi-channel image already matches.
fn broadcast_image(image: &Tensor, map_shape: &[usize]) -> Result<Tensor> {
    let (b, c, h, w) = image.dims4()?;
    let &[mb, mc, mh, mw] = map_shape else {
        return shape_err(format!("map must have 4 axes, got {map_shape:?}"));
    };
    if (b, h, w) != (mb, mh, mw) || (c != 1 && c != mc) {
        return shape_err(format!(
            "image {:?} cannot be broadcast over map {map_shape:?}",
            image.shape()
        ));
    }
    if c == mc {
        return Ok(image.clone());
    }
    let hw = h * w;
    Ok(Tensor::from_fn(map_shape, |i| {
        let bi = i / (mc * hw);
        image.data()[bi * hw + i % hw]
    }))
}

/// Pixel additive blending `Z = map + lambda_noise * image * noise`, where
/// `noise` has the map's shape and is drawn fresh from `rng`. With
/// `lambda_noise == 0` the map is returned untouched and no noise is drawn.
pub fn pixel_additive_blend(
    tape: &mut Tape,
    image: &Tensor,
    map: Var,
    lambda_noise: f64,
    rng: &mut RngStream,
) -> Result<Var> {
    let shape = tape.value(map).shape().to_vec();
    let image = broadcast_image(image, &shape)?;
    if lambda_noise == 0.0 {
        return Ok(map);
    }
    let noise = rng.sample_gaussian(&shape);
    let term: Vec<f64> = image
        .data()
        .iter()
        .zip(noise.data())
        .map(|(x, n)| lambda_noise * x * n)
        .collect();
    let term = tape.constant(Tensor::new(&shape, term)?);
    tape.add(map, term)
}

/// Builds the discriminator input for `map` under `mode`.
pub fn condition(
    tape: &mut Tape,
    mode: Conditioning,
    image: &Tensor,
    map: Var,
    lambda_noise: f64,
    rng: &mut RngStream,
) -> Result<Var> {
    match mode {
        Conditioning::None => Ok(map),
        Conditioning::Blend => pixel_additive_blend(tape, image, map, lambda_noise, rng),
        Conditioning::Concat => {
            let (b, _, h, w) = tape.value(map).dims4()?;
            let img = broadcast_image(image, &[b, 1, h, w])?;
            let img = tape.constant(img);
            tape.concat_channels(map, img)
        }
        Conditioning::Multiply => {
            let shape = tape.value(map).shape().to_vec();
            let img = tape.constant(broadcast_image(image, &shape)?);
            tape.mul(map, img)
        }
    }
}
