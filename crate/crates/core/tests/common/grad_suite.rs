//! Gradient cases shared by the gradient tests and the acceptance suite.
//! Each group returns `(case name, worst relative error)`.

use super::gradcheck;
use pca_seg::networks::{
    build_discriminator, build_segmenter, discriminator_forward, segmenter_forward,
    DiscriminatorSpec, Granularity, SegmenterSpec,
};
use pca_seg::numcore::{RngStream, Tape, Tensor, Var};
use pca_seg::Result;

pub type Cases = Vec<(String, f64)>;

fn gauss(seed: u64, shape: &[usize]) -> Tensor {
    RngStream::new(seed).sample_gaussian(shape)
}

/// `sum(v * w)` for fixed pseudo-random weights, so every output entry
/// contributes a distinct amount.
fn wsum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let w = gauss(seed, tape.value(v).shape());
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn case(out: &mut Cases, name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    out.push((name.to_string(), gradcheck(inputs, f)));
}

pub fn conv2d_variants() -> Cases {
    let mut out = Cases::new();
    for (k, stride, pad, hw) in [(3, 1, 1, 5), (4, 2, 1, 6), (1, 1, 0, 3), (2, 1, 0, 4)] {
        let x = gauss(1, &[2, 2, hw, hw]);
        let w = gauss(2, &[3, 2, k, k]);
        case(&mut out, &format!("conv k{k} s{stride} p{pad}"), &[x, w], |t, v| {
            let y = t.conv2d(v[0], v[1], stride, pad)?;
            wsum(t, y, 3)
        });
    }
    out
}

pub fn bias_upsample_pool() -> Cases {
    let mut out = Cases::new();
    case(&mut out, "bias_add", &[gauss(1, &[2, 3, 2, 2]), gauss(2, &[3])], |t, v| {
        let y = t.bias_add(v[0], v[1])?;
        wsum(t, y, 3)
    });
    for factor in [2, 3] {
        case(&mut out, "upsample", &[gauss(4, &[1, 2, 3, 2])], |t, v| {
            let y = t.upsample_bilinear(v[0], factor)?;
            wsum(t, y, 5)
        });
    }
    case(&mut out, "max_pool2", &[gauss(6, &[2, 2, 4, 4])], |t, v| {
        let y = t.max_pool2(v[0])?;
        wsum(t, y, 7)
    });
    out
}

pub fn pointwise_and_channel_ops() -> Cases {
    let mut out = Cases::new();
    let x = gauss(8, &[2, 3, 2, 2]);
    case(&mut out, "leaky_relu", &[x.clone()], |t, v| {
        let y = t.leaky_relu(v[0], 0.2)?;
        wsum(t, y, 9)
    });
    case(&mut out, "sigmoid", &[x.clone()], |t, v| {
        let y = t.sigmoid(v[0]);
        wsum(t, y, 10)
    });
    case(&mut out, "softmax", &[x.clone()], |t, v| {
        let y = t.softmax_channels(v[0])?;
        wsum(t, y, 11)
    });
    case(&mut out, "concat", &[x.clone(), gauss(12, &[2, 1, 2, 2])], |t, v| {
        let y = t.concat_channels(v[0], v[1])?;
        wsum(t, y, 13)
    });
    case(&mut out, "gap", &[x.clone()], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        wsum(t, y, 14)
    });
    case(&mut out, "select_batch", &[x.clone()], |t, v| {
        let y = t.select_batch(v[0], &[1, 0, 1])?;
        wsum(t, y, 15)
    });
    case(&mut out, "mean_batch", &[x.clone()], |t, v| {
        let y = t.mean_batch(v[0])?;
        wsum(t, y, 16)
    });
    case(&mut out, "channel_sums", &[x], |t, v| {
        let y = t.channel_sums(v[0])?;
        wsum(t, y, 17)
    });
    out
}

pub fn elementwise_ops() -> Cases {
    let mut out = Cases::new();
    let a = gauss(20, &[2, 3]);
    let b = gauss(21, &[2, 3]);
    // keep divisors and log arguments away from zero
    let pos = Tensor::from_fn(&[2, 3], |i| 0.5 + 0.3 * i as f64);
    case(&mut out, "add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        wsum(t, y, 22)
    });
    case(&mut out, "sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1])?;
        wsum(t, y, 23)
    });
    case(&mut out, "mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1])?;
        wsum(t, y, 24)
    });
    case(&mut out, "div", &[a.clone(), pos.clone()], |t, v| {
        let y = t.div(v[0], v[1])?;
        wsum(t, y, 25)
    });
    case(&mut out, "affine", &[a.clone()], |t, v| {
        let y = t.affine(v[0], -1.5, 0.25);
        wsum(t, y, 26)
    });
    case(&mut out, "square", &[a.clone()], |t, v| {
        let y = t.square(v[0]);
        wsum(t, y, 27)
    });
    case(&mut out, "log", &[pos], |t, v| {
        let y = t.log_clamped(v[0], 1e-12);
        wsum(t, y, 28)
    });
    case(&mut out, "sum", &[a.clone()], |t, v| Ok(t.sum(v[0])));
    case(&mut out, "mean", &[a], |t, v| Ok(t.mean(v[0])));
    out
}

pub fn two_layer_conv_net_on_8x8() -> Cases {
    let mut out = Cases::new();
    let x = gauss(30, &[1, 1, 8, 8]);
    let w1 = gauss(31, &[4, 1, 3, 3]);
    let w2 = gauss(32, &[2, 4, 3, 3]);
    case(&mut out, "two-layer conv", &[x, w1, w2], |t, v| {
        let h = t.conv2d(v[0], v[1], 1, 1)?;
        let h = t.leaky_relu(h, 0.2)?;
        let h = t.conv2d(h, v[2], 2, 1)?;
        let h = t.sigmoid(h);
        Ok(t.mean(h))
    });
    out
}

pub fn random_composite_graphs() -> Cases {
    let mut out = Cases::new();
    for seed in 0..12u64 {
        let mut rng = RngStream::new(100 + seed);
        let depth = 1 + rng.below(6);
        let ops: Vec<usize> = (0..depth).map(|_| rng.below(8)).collect();
        let x = gauss(200 + seed, &[2, 2, 4, 4]);
        let w = gauss(300 + seed, &[2, 2, 3, 3]).data().iter().map(|v| v * 0.5).collect();
        let w = Tensor::new(&[2, 2, 3, 3], w).unwrap();
        let err = gradcheck(&[x, w], |t, v| {
            let mut h = v[0];
            for &op in &ops {
                h = match op {
                    0 => t.conv2d(h, v[1], 1, 1)?,
                    1 => t.leaky_relu(h, 0.2)?,
                    2 => t.sigmoid(h),
                    3 => t.softmax_channels(h)?,
                    4 => {
                        let p = t.max_pool2(h)?;
                        t.upsample_bilinear(p, 2)?
                    }
                    5 => t.mul(h, h)?,
                    6 => {
                        // batch gather + batch mean + channel concat, folded
                        // back to two channels by a fixed 1x1 conv
                        let c = t.concat_channels(h, h)?;
                        let s = t.select_batch(c, &[1, 0])?;
                        let m = t.mean_batch(s)?;
                        let m = t.select_batch(m, &[0, 0])?;
                        let k = t.constant(Tensor::from_fn(&[2, 4, 1, 1], |i| {
                            if i % 5 == 0 { 1.0 } else { 0.5 }
                        }));
                        let r = t.conv2d(m, k, 1, 0)?;
                        t.add(r, h)?
                    }
                    _ => t.affine(h, 1.3, -0.2),
                };
            }
            wsum(t, h, 400 + seed)
        });
        out.push((format!("composite seed {seed} ops {ops:?}"), err));
    }
    out
}

pub fn segmenter_gradients() -> Cases {
    let mut out = Cases::new();
    let spec = SegmenterSpec {
        in_channels: 1,
        num_classes: 3,
        depth: 2,
        base_channels: 4,
    };
    let state = build_segmenter(&spec, &mut RngStream::new(40)).unwrap();
    let x = gauss(41, &[1, 1, 8, 8]);
    // check the input and a few parameter tensors (the first kernel, a
    // decoder kernel and the head)
    let picks = [0usize, 10, state.params().len() - 2];
    let mut inputs = vec![x];
    inputs.extend(picks.iter().map(|&i| state.params()[i].clone()));
    case(&mut out, "segmenter", &inputs, |t, v| {
        let mut bound_params: Vec<Var> = state.params().iter().map(|p| t.constant(p.clone())).collect();
        for (slot, &i) in picks.iter().enumerate() {
            bound_params[i] = v[slot + 1];
        }
        let bound = pca_seg::networks::Bound::from_vars(bound_params);
        let y = segmenter_forward(&spec, t, &bound, v[0])?;
        wsum(t, y, 42)
    });
    out
}

pub fn discriminator_gradients() -> Cases {
    let mut out = Cases::new();
    // Seed chosen so no LeakyReLU pre-activation lies within a finite
    // difference step of the kink.
    const SEED: u64 = 100;
    for g in [Granularity::Image, Granularity::Patch, Granularity::Pixel] {
        let spec = DiscriminatorSpec::for_granularity(g, 2);
        let state = build_discriminator(&spec, &mut RngStream::new(SEED)).unwrap();
        let x = gauss(SEED + 1, &[2, 2, 8, 8]);
        let mut inputs = vec![x];
        inputs.extend(state.params().iter().cloned());
        case(&mut out, &format!("discriminator {g}"), &inputs, |t, v| {
            let bound = pca_seg::networks::Bound::from_vars(v[1..].to_vec());
            let out = discriminator_forward(&spec, t, &bound, v[0])?;
            let a = wsum(t, out.confidence, 52)?;
            let b = wsum(t, out.features, 53)?;
            t.add(a, b)
        });
    }
    out
}
