//! Segmenter and discriminator construction, forward passes, geometry and
//! checkpoints.
//!
//! Parameters are stored in a [`NetworkState`] as plain tensors. A forward
//! pass first binds them onto a [`Tape`](crate::numcore::Tape) with
//! [`NetworkState::bind`], choosing per pass whether they are trainable.

mod checkpoint;
mod discriminator;
mod geometry;
mod segmenter;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Gradients, RngStream, Tape, Tensor, Var};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use discriminator::{
    build_discriminator, discriminator_forward, parse_layers, ConvLayer, DiscOutput,
    DiscriminatorSpec, Granularity, LEAKY_ALPHA, PATCH_LAYERS_256, PATCH_LAYERS_32, PIXEL_LAYERS,
};
pub use geometry::{output_geometry, receptive_field};
pub use segmenter::{build_segmenter, segmenter_forward, segmenter_param_count, SegmenterSpec};

/// Either network description; serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    Segmenter(SegmenterSpec),
    Discriminator(DiscriminatorSpec),
}

impl NetworkSpec {
    /// Shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            NetworkSpec::Segmenter(s) => s.param_shapes(),
            NetworkSpec::Discriminator(d) => d.param_shapes(),
        }
    }
}

/// Learnable parameters of one network together with the spec that fixes
/// their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

/// Parameters of one network as recorded on a particular tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars recorded by hand, in parameter storage order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Variance gain of the segmenter initialisation; 6 keeps activation scale
/// through the ReLU stack.
pub const SEGMENTER_INIT_GAIN: f64 = 6.0;

impl NetworkState {
    /// Uniform `±sqrt(gain/fan_in)` initialisation of every weight and bias,
    /// with `gain` 6 for the ReLU segmenter and 1 for the discriminator.
    /// A bias shares the fan-in of the kernel it follows.
    pub fn initialize(spec: NetworkSpec, rng: &mut RngStream) -> Self {
        let gain = match spec {
            NetworkSpec::Segmenter(_) => SEGMENTER_INIT_GAIN,
            NetworkSpec::Discriminator(_) => 1.0,
        };
        let mut fan_in = 1;
        let params = spec
            .param_shapes()
            .iter()
            .map(|shape| {
                if shape.len() == 4 {
                    fan_in = shape[1] * shape[2] * shape[3];
                }
                let bound = (gain / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| rng.uniform_range(-bound, bound))
            })
            .collect();
        Self { spec, params }
    }

    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "spec expects {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::Config(format!(
                    "parameter {i}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Records every parameter on `tape`, as leaves when `trainable` and as
    /// constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Copies each parameter's gradient out of `grads` into its grad slot.
    /// Parameters the loss did not reach get a zero gradient.
    pub fn store_grads(&mut self, bound: &Bound, grads: &Gradients) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(&bound.vars) {
            let g = grads
                .get(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()]);
            p.set_grad(g)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Bitwise parameter equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_identical(&self, other: &NetworkState) -> bool {
        self.spec == other.spec
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
