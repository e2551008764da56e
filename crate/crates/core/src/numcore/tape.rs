use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    BiasAdd { input: Var, bias: Var },
    Upsample { input: Var, factor: usize },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    LeakyRelu { input: Var, alpha: f64 },
    Sigmoid { input: Var },
    SoftmaxChannels { input: Var },
    ConcatChannels { a: Var, b: Var },
    GlobalAvgPool { input: Var },
    SelectBatch { input: Var, indices: Vec<usize> },
    MeanBatch { input: Var },
    ChannelSums { input: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Affine { input: Var, scale: f64 },
    Square { input: Var },
    Log { input: Var, floor: f64 },
    Sum { input: Var },
    Mean { input: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of executed primitives. A tape is built fresh for
/// every forward pass and dropped after its backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient buffer per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable and
    /// requires a gradient.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Node indices whose backward rule ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
        None => *slot = Some(contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable leaf (a trainable parameter or input).
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        t.clear_grad();
        self.push(t, Op::Leaf, true)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.clear_grad();
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the graph behind it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (batch, cin, h, w) = self.value(input).dims4()?;
        let (cout, kcin, k, k2) = self.value(kernel).dims4()?;
        if k != k2 {
            return shape_err(format!("conv2d kernel must be square, got {k}x{k2}"));
        }
        if kcin != cin {
            return Err(Error::Config(format!(
                "conv2d: input has {cin} channels but kernel expects {kcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be >= 1".into()));
        }
        let (ho, wo) = match (
            conv::conv_output_extent(h, k, stride, pad),
            conv::conv_output_extent(w, k, stride, pad),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::Config(format!(
                    "conv2d: {h}x{w} input with pad {pad} is smaller than kernel {k}"
                )))
            }
        };
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let out = conv::conv2d_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(&[batch, cout, ho, wo], out)?;
        let rg = self.needs(input) || self.needs(kernel);
        Ok(self.push(value, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// Adds a per-channel bias of shape `[C]` to a `[B, C, H, W]` tensor.
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (_, c, h, w) = self.value(input).dims4()?;
        if self.value(bias).shape() != [c] {
            return shape_err(format!(
                "bias of shape {:?} for {c} channels",
                self.value(bias).shape()
            ));
        }
        let bv = self.value(bias).data().to_vec();
        let mut out = self.value(input).clone();
        for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            let b = bv[i % c];
            plane.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.needs(input) || self.needs(bias);
        Ok(self.push(out, Op::BiasAdd { input, bias }, rg))
    }

    /// Corner-aligned bilinear upsampling by an integer factor.
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(Error::Config(format!("upsample factor must be >= 2, got {factor}")));
        }
        let dims = self.value(input).dims4()?;
        let out = conv::upsample_forward(dims, factor, self.value(input).data());
        let value = Tensor::new(&[dims.0, dims.1, dims.2 * factor, dims.3 * factor], out)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::Upsample { input, factor }, rg))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let dims = self.value(input).dims4()?;
        if dims.2 % 2 != 0 || dims.3 % 2 != 0 {
            return shape_err(format!("max_pool2 needs even extents, got {}x{}", dims.2, dims.3));
        }
        let (out, argmax) = conv::maxpool2_forward(dims, self.value(input).data());
        let value = Tensor::new(&[dims.0, dims.1, dims.2 / 2, dims.3 / 2], out)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("leaky_relu alpha {alpha} outside [0, 1)")));
        }
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= alpha;
            }
        }
        let rg = self.needs(input);
        Ok(self.push(out, Op::LeakyRelu { input, alpha }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, 0.0)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let mut out = self.value(input).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let rg = self.needs(input);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    /// Softmax across the channel axis of `[B, C, H, W]`, per pixel.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        if c < 2 {
            return shape_err(format!("softmax over {c} channel(s)"));
        }
        let hw = h * w;
        let mut out = self.value(input).clone();
        let d = out.data_mut();
        for bi in 0..b {
            for p in 0..hw {
                let at = |ch: usize| bi * c * hw + ch * hw + p;
                let max = (0..c).map(|ch| d[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for ch in 0..c {
                    let e = (d[at(ch)] - max).exp();
                    d[at(ch)] = e;
                    total += e;
                }
                for ch in 0..c {
                    d[at(ch)] /= total;
                }
            }
        }
        let rg = self.needs(input);
        Ok(self.push(out, Op::SoftmaxChannels { input }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.value(a).dims4()?;
        let (bb, cb, hb, wb) = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return shape_err(format!(
                "concat_channels of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let (sa, sb) = (ca * ha * wa, cb * ha * wa);
        let mut data = Vec::with_capacity(ba * (sa + sb));
        for i in 0..ba {
            data.extend_from_slice(&self.value(a).data()[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&self.value(b).data()[i * sb..(i + 1) * sb]);
        }
        let value = Tensor::new(&[ba, ca + cb, ha, wa], data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatChannels { a, b }, rg))
    }

    /// Spatial mean: `[B, C, H, W]` to `[B, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        let data = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(&[b, c, 1, 1], data)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    /// Gathers the listed batch elements (in order, repeats allowed).
    pub fn select_batch(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(input);
        let n = t.shape()[0];
        if indices.is_empty() {
            return shape_err("select_batch with no indices");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return shape_err(format!("select_batch index {bad} out of range for batch {n}"));
        }
        let stride = t.numel() / n;
        let mut data = Vec::with_capacity(stride * indices.len());
        for &i in indices {
            data.extend_from_slice(&t.data()[i * stride..(i + 1) * stride]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(input);
        Ok(self.push(
            value,
            Op::SelectBatch {
                input,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over the batch axis: `[B, ...]` to `[1, ...]`.
    pub fn mean_batch(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let n = t.shape()[0];
        let stride = t.numel() / n;
        let mut data = vec![0.0; stride];
        for chunk in t.data().chunks(stride) {
            data.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
        }
        data.iter_mut().for_each(|d| *d /= n as f64);
        let mut shape = t.shape().to_vec();
        shape[0] = 1;
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::MeanBatch { input }, rg))
    }

    /// Per-channel totals over batch and space: `[B, C, H, W]` to `[C]`.
    pub fn channel_sums(&mut self, input: Var) -> Result<Var> {
        let (_, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        let mut sums = vec![0.0; c];
        for (i, plane) in self.value(input).data().chunks(hw).enumerate() {
            sums[i % c] += plane.iter().sum::<f64>();
        }
        let value = Tensor::new(&[c], sums)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::ChannelSums { input }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.value(a).shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul { a, b }, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Div { a, b }, rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(input).clone();
        out.data_mut().iter_mut().for_each(|v| *v = scale * *v + shift);
        let rg = self.needs(input);
        self.push(out, Op::Affine { input, scale }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        self.affine(input, factor, 0.0)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let mut out = self.value(input).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= *v);
        let rg = self.needs(input);
        self.push(out, Op::Square { input }, rg)
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where clamped.
    pub fn log_clamped(&mut self, input: Var, floor: f64) -> Var {
        let mut out = self.value(input).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(floor).ln());
        let rg = self.needs(input);
        self.push(out, Op::Log { input, floor }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.needs(input);
        self.push(Tensor::scalar(m), Op::Mean { input }, rg)
    }

    /// Reverse sweep from a one-element `loss`. Nodes are visited in exact
    /// reverse recording order; nodes that do not require a gradient are
    /// skipped entirely.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut visited = Vec::new();
        if !self.needs(loss) {
            return Ok(Gradients { grads, visited });
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            visited.push(id);
            self.backprop(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, contribution: Vec<f64>| {
            if self.needs(v) {
                accumulate(&mut grads[v.0], contribution);
            }
        };
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let (gx, gk) = conv::conv2d_backward(
                    geom,
                    val(*input),
                    val(*kernel),
                    g,
                    self.needs(*input),
                    self.needs(*kernel),
                );
                if let Some(gx) = gx {
                    send(*input, gx);
                }
                if let Some(gk) = gk {
                    send(*kernel, gk);
                }
            }
            Op::BiasAdd { input, bias } => {
                let (_, c, h, w) = node.value.dims4()?;
                if self.needs(*bias) {
                    let mut gb = vec![0.0; c];
                    for (i, plane) in g.chunks(h * w).enumerate() {
                        gb[i % c] += plane.iter().sum::<f64>();
                    }
                    send(*bias, gb);
                }
                send(*input, g.to_vec());
            }
            Op::Upsample { input, factor } => {
                let dims = self.nodes[input.0].value.dims4()?;
                send(*input, conv::upsample_backward(dims, *factor, g));
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gx = vec![0.0; self.nodes[input.0].value.numel()];
                for (gi, &src) in g.iter().zip(argmax) {
                    gx[src] += gi;
                }
                send(*input, gx);
            }
            Op::LeakyRelu { input, alpha } => {
                let gx = g
                    .iter()
                    .zip(val(*input))
                    .map(|(gi, &x)| if x >= 0.0 { *gi } else { alpha * gi })
                    .collect();
                send(*input, gx);
            }
            Op::Sigmoid { input } => {
                let gx = g.iter().zip(out).map(|(gi, y)| gi * y * (1.0 - y)).collect();
                send(*input, gx);
            }
            Op::SoftmaxChannels { input } => {
                let (b, c, h, w) = node.value.dims4()?;
                let hw = h * w;
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for p in 0..hw {
                        let at = |ch: usize| bi * c * hw + ch * hw + p;
                        let dot: f64 = (0..c).map(|ch| g[at(ch)] * out[at(ch)]).sum();
                        for ch in 0..c {
                            gx[at(ch)] = out[at(ch)] * (g[at(ch)] - dot);
                        }
                    }
                }
                send(*input, gx);
            }
            Op::ConcatChannels { a, b } => {
                let (n, ca, h, w) = self.nodes[a.0].value.dims4()?;
                let cb = self.nodes[b.0].value.dims4()?.1;
                let (sa, sb) = (ca * h * w, cb * h * w);
                let mut ga = Vec::with_capacity(n * sa);
                let mut gb = Vec::with_capacity(n * sb);
                for chunk in g.chunks(sa + sb) {
                    ga.extend_from_slice(&chunk[..sa]);
                    gb.extend_from_slice(&chunk[sa..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::GlobalAvgPool { input } => {
                let (_, _, h, w) = self.nodes[input.0].value.dims4()?;
                let hw = h * w;
                let gx = g
                    .iter()
                    .flat_map(|gi| std::iter::repeat_n(gi / hw as f64, hw))
                    .collect();
                send(*input, gx);
            }
            Op::SelectBatch { input, indices } => {
                let src = &self.nodes[input.0].value;
                let stride = src.numel() / src.shape()[0];
                let mut gx = vec![0.0; src.numel()];
                for (k, &i) in indices.iter().enumerate() {
                    gx[i * stride..(i + 1) * stride]
                        .iter_mut()
                        .zip(&g[k * stride..(k + 1) * stride])
                        .for_each(|(d, s)| *d += s);
                }
                send(*input, gx);
            }
            Op::MeanBatch { input } => {
                let src = &self.nodes[input.0].value;
                let n = src.shape()[0];
                let gx = (0..n)
                    .flat_map(|_| g.iter().map(move |gi| gi / n as f64))
                    .collect();
                send(*input, gx);
            }
            Op::ChannelSums { input } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4()?;
                let hw = h * w;
                let gx = (0..b * c)
                    .flat_map(|plane| std::iter::repeat_n(g[plane % c], hw))
                    .collect();
                send(*input, gx);
            }
            Op::Add { a, b } => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub { a, b } => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    send(*a, g.iter().zip(val(*b)).map(|(gi, y)| gi * y).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(val(*a)).map(|(gi, x)| gi * x).collect());
                }
            }
            Op::Div { a, b } => {
                let (xa, xb) = (val(*a), val(*b));
                if self.needs(*a) {
                    send(*a, g.iter().zip(xb).map(|(gi, y)| gi / y).collect());
                }
                if self.needs(*b) {
                    let gb = g
                        .iter()
                        .zip(xa.iter().zip(xb))
                        .map(|(gi, (x, y))| -gi * x / (y * y))
                        .collect();
                    send(*b, gb);
                }
            }
            Op::Affine { input, scale } => {
                send(*input, g.iter().map(|gi| gi * scale).collect());
            }
            Op::Square { input } => {
                send(*input, g.iter().zip(val(*input)).map(|(gi, x)| 2.0 * gi * x).collect());
            }
            Op::Log { input, floor } => {
                let gx = g
                    .iter()
                    .zip(val(*input))
                    .map(|(gi, &x)| if x > *floor { gi / x } else { 0.0 })
                    .collect();
                send(*input, gx);
            }
            Op::Sum { input } => {
                let n = self.nodes[input.0].value.numel();
                send(*input, vec![g[0]; n]);
            }
            Op::Mean { input } => {
                let n = self.nodes[input.0].value.numel();
                send(*input, vec![g[0] / n as f64; n]);
            }
        }
        Ok(())
    }
}
