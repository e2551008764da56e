use super::{DiscriminatorSpec, Granularity};
use crate::error::{config_err, Result};
use crate::numcore::conv_output_extent;

/// Side length of the input region that influences one decision cell:
/// `r_0 = 1`, `r_i = r_{i-1} + (k_i - 1) * prod_{j<i} s_j`.
pub fn receptive_field(spec: &DiscriminatorSpec) -> Result<usize> {
    if spec.granularity == Granularity::Image {
        return config_err("receptive field is only defined per cell for patch/pixel granularity");
    }
    let mut field = 1;
    let mut jump = 1;
    for l in &spec.layers {
        field += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    Ok(field)
}

/// Decision-map extents for an `input_hw` input.
pub fn output_geometry(spec: &DiscriminatorSpec, input_hw: (usize, usize)) -> Result<(usize, usize)> {
    let (mut h, mut w) = input_hw;
    for (i, l) in spec.layers.iter().enumerate() {
        match (
            conv_output_extent(h, l.kernel, l.stride, l.pad),
            conv_output_extent(w, l.kernel, l.stride, l.pad),
        ) {
            (Some(nh), Some(nw)) => (h, w) = (nh, nw),
            _ => {
                return config_err(format!(
                    "layer {i}: {h}x{w} input (pad {}) is smaller than kernel {}",
                    l.pad, l.kernel
                ))
            }
        }
    }
    Ok(match spec.granularity {
        Granularity::Image => (1, 1),
        _ => (h, w),
    })
}
