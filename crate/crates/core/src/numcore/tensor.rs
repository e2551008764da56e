use std::fmt::Write as _;

use crate::error::{shape_err, Error, Result};

/// Dense row-major tensor of up to four axes (batch, channel, height, width),
/// with an optional gradient slot of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return shape_err(format!("tensor rank must be 1..=4, got {}", shape.len()));
        }
        if shape.iter().any(|&d| d == 0) {
            return shape_err(format!("tensor extents must be positive, got {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[1], vec![value]).expect("valid shape")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Interprets the tensor as `[B, C, H, W]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => shape_err(format!("expected a 4-axis tensor, got {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return shape_err(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the `b`-th batch element out as a `[1, ...]` tensor.
    pub fn batch_item(&self, b: usize) -> Result<Tensor> {
        let n = self.shape[0];
        if b >= n {
            return shape_err(format!("batch index {b} out of range for {n}"));
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(&shape, self.data[b * stride..(b + 1) * stride].to_vec())
    }

    /// Stacks equally shaped `[1, ...]` tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = match items.first() {
            Some(t) => t,
            None => return shape_err("cannot stack zero tensors"),
        };
        let inner = &first.shape[1..];
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut batch = 0;
        for t in items {
            if &t.shape[1..] != inner {
                return shape_err(format!(
                    "stack of mismatched shapes {:?} and {:?}",
                    first.shape, t.shape
                ));
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Tensor::new(&shape, data)
    }

    /// Plain-text dump: a `shape: d0 d1 ...` header, then the values in
    /// row-major order, one innermost row per line. Values use the shortest
    /// decimal representation that parses back to the identical `f64`.
    pub fn dump(&self) -> String {
        let mut out = String::from("shape:");
        for d in &self.shape {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let row = *self.shape.last().unwrap();
        for chunk in self.data.chunks(row) {
            let mut first = true;
            for v in chunk {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses one tensor in [`Tensor::dump`] format from the front of `lines`.
    pub fn parse_dump<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Tensor> {
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing tensor header".into()))?;
        let dims = header
            .strip_prefix("shape:")
            .ok_or_else(|| Error::Parse(format!("bad tensor header {header:?}")))?;
        let shape = dims
            .split_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("bad extent in {header:?}: {e}")))?;
        if shape.is_empty() {
            return Err(Error::Parse("tensor header without extents".into()));
        }
        let numel: usize = shape.iter().product();
        let rows = numel / shape.last().copied().unwrap_or(1).max(1);
        let mut data = Vec::with_capacity(numel);
        for _ in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated tensor payload".into()))?;
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value {tok:?}: {e}")))?,
                );
            }
        }
        Tensor::new(&shape, data).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn grad_must_match_shape() {
        let mut t = Tensor::zeros(&[2, 2]);
        assert!(t.set_grad(vec![1.0; 3]).is_err());
        t.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 4);
    }

    #[test]
    fn dump_golden() {
        let t = Tensor::new(&[2, 3], vec![0.0, 1.5, -2.0, 0.1, 1e-300, 3.0]).unwrap();
        assert_eq!(t.dump(), "shape: 2 3\n0.0 1.5 -2.0\n0.1 1e-300 3.0\n");
    }

    #[test]
    fn dump_roundtrip_is_bit_exact() {
        let t = Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.731).sin() / 7.0);
        let text = t.dump();
        let back = Tensor::parse_dump(&mut text.lines()).unwrap();
        assert_eq!(t.shape(), back.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn parse_rejects_truncation() {
        let text = "shape: 2 2\n1 2\n";
        assert!(Tensor::parse_dump(&mut text.lines()).is_err());
    }

    #[test]
    fn stack_and_split() {
        let a = Tensor::full(&[1, 2, 2, 2], 1.0);
        let b = Tensor::full(&[1, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 2]);
        assert_eq!(s.batch_item(1).unwrap(), b);
    }
}
