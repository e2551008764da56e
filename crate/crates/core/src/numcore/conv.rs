//! Spatial kernels: im2col convolution, bilinear upsampling, 2x2 max pooling.
//! All buffers are row-major `[B, C, H, W]`.

/// Output extent of a convolution along one axis, or `None` if the padded
/// input is smaller than the kernel.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn pixels(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = a · b + beta · c` for row-major operands, where each operand may be
/// read transposed via its strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`;
    // every caller passes buffers sized m*k, k*n and m*n respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output columns `ox` whose input column `ox * stride + kj - pad` lies
/// inside `0..w`, as a half-open range.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    // largest ox with ox * stride + kj < w + pad
    let limit = g.w + g.pad;
    let hi = if limit > kj { ((limit - kj - 1) / g.stride + 1).min(g.wo) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let p = g.pixels();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (o, ix) in out_row[lo..hi].iter_mut().zip((first..).step_by(g.stride)) {
                            *o = src[ix];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], gx: &mut [f64]) {
    let p = g.pixels();
    for ci in 0..g.cin {
        let plane = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s_row = &src[oy * g.wo + lo..oy * g.wo + hi];
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + hi - lo].iter_mut().zip(s_row) {
                            *d += v;
                        }
                    } else {
                        for (v, ix) in s_row.iter().zip((first..).step_by(g.stride)) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (patch, p) = (g.patch(), g.pixels());
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * p;
    let mut out = vec![0.0; g.batch * out_sz];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; patch * p] };
    for b in 0..g.batch {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let src: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        gemm(
            g.cout,
            patch,
            p,
            kernel,
            (patch, 1),
            src,
            (p, 1),
            0.0,
            &mut out[b * out_sz..(b + 1) * out_sz],
        );
    }
    out
}

/// Returns `(grad_input, grad_kernel)`; either may be skipped.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    kernel: &[f64],
    gout: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (patch, p) = (g.patch(), g.pixels());
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * p;
    let mut gx = want_input.then(|| vec![0.0; g.batch * in_sz]);
    let mut gk = want_kernel.then(|| vec![0.0; g.cout * patch]);
    let mut cols = vec![0.0; patch * p];
    for b in 0..g.batch {
        let gb = &gout[b * out_sz..(b + 1) * out_sz];
        if let Some(gk) = gk.as_mut() {
            let xb = &x[b * in_sz..(b + 1) * in_sz];
            let src: &[f64] = if g.is_pointwise() {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            gemm(g.cout, p, patch, gb, (p, 1), src, (1, p), 1.0, gk);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[b * in_sz..(b + 1) * in_sz];
            if g.is_pointwise() {
                gemm(patch, g.cout, p, kernel, (1, patch), gb, (p, 1), 1.0, dst);
            } else {
                gemm(patch, g.cout, p, kernel, (1, patch), gb, (p, 1), 0.0, &mut cols);
                col2im_add(g, &cols, dst);
            }
        }
    }
    (gx, gk)
}

/// Corner-aligned source coordinate of output index `o` when stretching
/// `n` samples to `n * factor`: left neighbour and blend weight.
fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let m = n * factor;
    (0..m)
        .map(|o| {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (n - 1) as f64 / (m - 1) as f64;
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward(dims: (usize, usize, usize, usize), factor: usize, x: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = dims;
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[oy * ow + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(dims: (usize, usize, usize, usize), factor: usize, gout: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = dims;
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![0.0; b * c * h * w];
    for plane in 0..b * c {
        let src = &gout[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let g = src[oy * ow + ox];
                dst[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                dst[y0 * w + x1] += g * (1.0 - wy) * wx;
                dst[y1 * w + x0] += g * wy * (1.0 - wx);
                dst[y1 * w + x1] += g * wy * wx;
            }
        }
    }
    gx
}

/// 2x2 stride-2 max pooling; also returns the flat input index of each
/// selected maximum (first in scan order on ties).
pub(crate) fn maxpool2_forward(dims: (usize, usize, usize, usize), x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (b, c, h, w) = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
