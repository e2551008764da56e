use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Bound, NetworkSpec, NetworkState};
use crate::error::{config_err, Error, Result};
use crate::numcore::{RngStream, Tape, Var};

/// Spatial resolution of the discriminator decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One decision per image (global average of the patch logits).
    Image,
    /// One decision per receptive-field patch.
    Patch,
    /// One decision per pixel (1x1 kernels only).
    Pixel,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Image => "image",
            Granularity::Patch => "patch",
            Granularity::Pixel => "pixel",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Granularity::Image),
            "patch" => Ok(Granularity::Patch),
            "pixel" => Ok(Granularity::Pixel),
            other => config_err(format!("unknown granularity {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            pad,
        }
    }
}

/// Parses `out:kernel:stride:pad` groups separated by commas, e.g.
/// `"32:4:2:1,64:4:2:1,1:4:2:1"`.
pub fn parse_layers(text: &str) -> Result<Vec<ConvLayer>> {
    text.split(',')
        .map(|group| {
            let nums = group
                .trim()
                .split(':')
                .map(|n| n.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("bad layer {group:?}: {e}")))?;
            match nums[..] {
                [o, k, s, p] => Ok(ConvLayer::new(o, k, s, p)),
                _ => config_err(format!("layer {group:?} must be out:kernel:stride:pad")),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub granularity: Granularity,
    pub in_channels: usize,
    pub layers: Vec<ConvLayer>,
    pub activation_alpha: f64,
}

/// Three 4x4 stride-2 layers with 32, 64 and 1 channels: a 22x22 receptive
/// field and a 32x32 decision map on 256x256 inputs.
pub const PATCH_LAYERS_256: [ConvLayer; 3] = [
    ConvLayer::new(32, 4, 2, 1),
    ConvLayer::new(64, 4, 2, 1),
    ConvLayer::new(1, 4, 2, 1),
];

/// Two 4x4 stride-2 layers: an 8x8 decision map on 32x32 inputs.
pub const PATCH_LAYERS_32: [ConvLayer; 2] = [ConvLayer::new(32, 4, 2, 1), ConvLayer::new(1, 4, 2, 1)];

pub const PIXEL_LAYERS: [ConvLayer; 2] = [ConvLayer::new(32, 1, 1, 0), ConvLayer::new(1, 1, 1, 0)];

pub const LEAKY_ALPHA: f64 = 0.2;

impl DiscriminatorSpec {
    /// The full-resolution patch discriminator (for 256x256 inputs).
    pub fn patch_256(in_channels: usize) -> Self {
        Self {
            granularity: Granularity::Patch,
            in_channels,
            layers: PATCH_LAYERS_256.to_vec(),
            activation_alpha: LEAKY_ALPHA,
        }
    }

    /// Default discriminator for 32x32 inputs at the given granularity. The
    /// image variant shares the patch stack and pools its logits globally.
    pub fn for_granularity(granularity: Granularity, in_channels: usize) -> Self {
        let layers = match granularity {
            Granularity::Image | Granularity::Patch => PATCH_LAYERS_32.to_vec(),
            Granularity::Pixel => PIXEL_LAYERS.to_vec(),
        };
        Self {
            granularity,
            in_channels,
            layers,
            activation_alpha: LEAKY_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return config_err("discriminator needs at least one layer");
        };
        if last.out_channels != 1 {
            return config_err(format!(
                "last discriminator layer must have 1 output channel, got {}",
                last.out_channels
            ));
        }
        if self.in_channels == 0 {
            return config_err("discriminator needs at least one input channel");
        }
        if !(0.0..1.0).contains(&self.activation_alpha) {
            return config_err(format!("alpha {} outside [0, 1)", self.activation_alpha));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.out_channels == 0 {
                return config_err(format!("layer {i} has a zero kernel, stride or width"));
            }
            if self.granularity == Granularity::Pixel && (l.kernel, l.stride, l.pad) != (1, 1, 0) {
                return config_err(format!(
                    "pixel granularity needs 1x1 stride-1 unpadded layers; layer {i} is {}:{}:{}",
                    l.kernel, l.stride, l.pad
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut cin = self.in_channels;
        let mut shapes = Vec::new();
        for l in &self.layers {
            shapes.push(vec![l.out_channels, cin, l.kernel, l.kernel]);
            shapes.push(vec![l.out_channels]);
            cin = l.out_channels;
        }
        shapes
    }
}

pub fn build_discriminator(spec: &DiscriminatorSpec, rng: &mut RngStream) -> Result<NetworkState> {
    spec.validate()?;
    Ok(NetworkState::initialize(NetworkSpec::Discriminator(spec.clone()), rng))
}

/// Discriminator outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DiscOutput {
    /// `[B, 1, m, n]` sigmoid confidences (`m = n = 1` for image granularity).
    pub confidence: Var,
    /// Pre-sigmoid values matching `confidence`.
    pub logits: Var,
    /// Activations entering the final conv layer.
    pub features: Var,
}

pub fn discriminator_forward(
    spec: &DiscriminatorSpec,
    tape: &mut Tape,
    params: &Bound,
    input: Var,
) -> Result<DiscOutput> {
    let (_, c, _, _) = tape.value(input).dims4()?;
    if c != spec.in_channels {
        return config_err(format!(
            "discriminator expects {} input channel(s), got {c}",
            spec.in_channels
        ));
    }
    let vars = params.vars();
    let mut x = input;
    let mut features = input;
    let n = spec.layers.len();
    for (i, l) in spec.layers.iter().enumerate() {
        if i + 1 == n {
            features = x;
        }
        x = tape.conv2d(x, vars[2 * i], l.stride, l.pad)?;
        x = tape.bias_add(x, vars[2 * i + 1])?;
        if i + 1 < n {
            x = tape.leaky_relu(x, spec.activation_alpha)?;
        }
    }
    let logits = match spec.granularity {
        Granularity::Image => tape.global_avg_pool(x)?,
        Granularity::Patch | Granularity::Pixel => x,
    };
    let confidence = tape.sigmoid(logits);
    Ok(DiscOutput {
        confidence,
        logits,
        features,
    })
}
