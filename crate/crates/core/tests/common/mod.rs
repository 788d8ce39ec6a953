//! Naive reference implementations. Straight loops in f64 with explicit
//! bounds checks; slow on purpose so they are easy to audit.
#![allow(dead_code)]

use detbench_core::tensor::{BatchNormParams, ConvParams, Shape, Tensor};

pub fn conv2d(x: &Tensor, p: &ConvParams) -> (Shape, Vec<f64>) {
    let is = x.shape();
    let k = p.kernel;
    let oh = (is.h + 2 * p.padding - k) / p.stride + 1;
    let ow = (is.w + 2 * p.padding - k) / p.stride + 1;
    let os = Shape::new(is.n, p.out_channels, oh, ow);
    let cin = p.in_channels / p.groups;
    let cout = p.out_channels / p.groups;
    let mut out = vec![0.0f64; os.numel()];
    for n in 0..is.n {
        for o in 0..p.out_channels {
            let g = o / cout;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias.as_ref().map_or(0.0, |b| b[o] as f64);
                    for ic in 0..cin {
                        let c = g * cin + ic;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                if iy < 0 || ix < 0 || iy >= is.h as isize || ix >= is.w as isize {
                                    continue;
                                }
                                let w = p.weight[((o * cin + ic) * k + ky) * k + kx] as f64;
                                acc += w * x.at(n, c, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                    out[((n * os.c + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (os, out)
}

pub fn max_pool(x: &Tensor, k: usize, stride: usize, pad: usize) -> (Shape, Vec<f32>) {
    let is = x.shape();
    let oh = (is.h + 2 * pad - k) / stride + 1;
    let ow = (is.w + 2 * pad - k) / stride + 1;
    let os = Shape::new(is.n, is.c, oh, ow);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..is.n {
        for c in 0..is.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && iy < is.h as isize && ix < is.w as isize {
                                m = m.max(x.at(n, c, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    (os, out)
}

pub fn batch_norm(x: &[f64], channels: usize, plane: usize, bn: &BatchNormParams) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = (i / plane) % channels;
            let inv = 1.0 / (bn.var[c] as f64 + bn.eps as f64).sqrt();
            (v - bn.mean[c] as f64) * inv * bn.gamma[c] as f64 + bn.beta[c] as f64
        })
        .collect()
}

/// max |got - want| / max |want|, the error relative to the output's scale.
pub fn rel_err(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter().zip(want).map(|(g, w)| (*g as f64 - w).abs()).fold(0.0, f64::max) / scale
}

pub fn max_abs(got: &[f32], want: &[f64]) -> f64 {
    got.iter().zip(want).map(|(g, w)| (*g as f64 - w).abs()).fold(0.0, f64::max)
}

/// Conv with random weights (and optionally bias) from a fixed seed.
pub fn random_conv(ci: usize, co: usize, k: usize, s: usize, g: usize, bias: bool, seed: u64) -> ConvParams {
    use rand::SeedableRng;
    let mut p = ConvParams::new(ci, co, k, s, g).unwrap();
    if bias {
        p = p.with_bias();
    }
    p.randomize(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    p
}

pub fn random_bn(c: usize, seed: u64) -> BatchNormParams {
    use rand::SeedableRng;
    let mut bn = BatchNormParams::identity(c);
    bn.randomize(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    bn
}

/// Params of a k x k conv (ci -> co, groups g) followed by BN: weights + 2 * co.
pub fn conv_bn_params(ci: usize, co: usize, k: usize, g: usize) -> u64 {
    (k * k * (ci / g) * co + 2 * co) as u64
}
