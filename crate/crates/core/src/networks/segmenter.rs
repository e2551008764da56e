use serde::{Deserialize, Serialize};

use super::{Bound, NetworkSpec, NetworkState};
use crate::error::{config_err, Result};
use crate::numcore::{RngStream, Tape, Var};

/// U-Net style encoder/decoder: `depth` stages of two 3x3 conv+ReLU and a
/// 2x2 max pool, a two-conv bottleneck, then a mirrored decoder that
/// upsamples bilinearly and concatenates the matching encoder output.
/// A 1x1 conv maps to `num_classes` logits followed by a channel softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    pub in_channels: usize,
    pub num_classes: usize,
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 4,
            depth: 2,
            base_channels: 8,
        }
    }
}

impl SegmenterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return config_err(format!("segmenter depth must be >= 2, got {}", self.depth));
        }
        if self.base_channels < 4 {
            return config_err(format!(
                "segmenter base_channels must be >= 4, got {}",
                self.base_channels
            ));
        }
        if self.in_channels == 0 || self.num_classes < 2 {
            return config_err("segmenter needs >= 1 input channel and >= 2 classes");
        }
        Ok(())
    }

    /// Input extents must survive `depth` halvings exactly.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.depth;
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return config_err(format!(
                "input {h}x{w} is not divisible by 2^{} = {m}",
                self.depth
            ));
        }
        Ok(())
    }

    fn width(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub(crate) fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut conv = |cout: usize, cin: usize, k: usize| {
            shapes.push(vec![cout, cin, k, k]);
            shapes.push(vec![cout]);
        };
        let mut cin = self.in_channels;
        for s in 0..=self.depth {
            let c = self.width(s);
            conv(c, cin, 3);
            conv(c, c, 3);
            cin = c;
        }
        for s in (0..self.depth).rev() {
            let c = self.width(s);
            conv(c, self.width(s + 1) + c, 3);
            conv(c, c, 3);
        }
        conv(self.num_classes, self.base_channels, 1);
        shapes
    }
}

/// Total scalar parameter count implied by `spec`.
pub fn segmenter_param_count(spec: &SegmenterSpec) -> usize {
    spec.param_shapes()
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum()
}

pub fn build_segmenter(spec: &SegmenterSpec, rng: &mut RngStream) -> Result<NetworkState> {
    spec.validate()?;
    Ok(NetworkState::initialize(NetworkSpec::Segmenter(spec.clone()), rng))
}

struct ParamCursor<'a> {
    vars: &'a [Var],
    next: usize,
}

impl ParamCursor<'_> {
    fn conv(&mut self, tape: &mut Tape, x: Var, pad: usize) -> Result<Var> {
        let (w, b) = (self.vars[self.next], self.vars[self.next + 1]);
        self.next += 2;
        let y = tape.conv2d(x, w, 1, pad)?;
        tape.bias_add(y, b)
    }

    fn conv_relu(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = self.conv(tape, x, 1)?;
        tape.relu(y)
    }
}

/// Per-pixel class probabilities `[B, C, H, W]` for images `[B, in, H, W]`.
pub fn segmenter_forward(
    spec: &SegmenterSpec,
    tape: &mut Tape,
    params: &Bound,
    input: Var,
) -> Result<Var> {
    let (_, c, h, w) = tape.value(input).dims4()?;
    if c != spec.in_channels {
        return config_err(format!(
            "segmenter expects {} input channel(s), got {c}",
            spec.in_channels
        ));
    }
    spec.check_input(h, w)?;
    let mut cur = ParamCursor {
        vars: params.vars(),
        next: 0,
    };
    let mut skips = Vec::with_capacity(spec.depth);
    let mut x = input;
    for _ in 0..spec.depth {
        x = cur.conv_relu(tape, x)?;
        x = cur.conv_relu(tape, x)?;
        skips.push(x);
        x = tape.max_pool2(x)?;
    }
    x = cur.conv_relu(tape, x)?;
    x = cur.conv_relu(tape, x)?;
    for skip in skips.into_iter().rev() {
        let up = tape.upsample_bilinear(x, 2)?;
        x = tape.concat_channels(up, skip)?;
        x = cur.conv_relu(tape, x)?;
        x = cur.conv_relu(tape, x)?;
    }
    let logits = cur.conv(tape, x, 0)?;
    tape.softmax_channels(logits)
}
