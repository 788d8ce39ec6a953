use rand::Rng;
use std::cell::RefCell;

use super::{winograd, Shape, Tensor};
use crate::error::{Error, Result};

/// Square-kernel 2-D convolution with its bound weights.
/// Weight layout is (out, in / groups, k, k).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

impl ConvParams {
    /// Zero weights, "same" padding of (k - 1) / 2, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, groups: usize) -> Result<Self> {
        let p = ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel.saturating_sub(1) / 2,
            groups,
            weight: Vec::new(),
            bias: None,
        };
        p.check_geometry()?;
        Ok(ConvParams { weight: vec![0.0; p.weight_len()], ..p })
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = Some(vec![0.0; self.out_channels]);
        self
    }

    /// Variance-preserving uniform init for weights (and bias, if present).
    pub fn randomize<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = (self.in_channels / self.groups * self.kernel * self.kernel).max(1) as f32;
        let bound = (3.0 / fan_in).sqrt();
        self.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        if let Some(b) = self.bias.as_mut() {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups.max(1)) * self.kernel * self.kernel
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_channels && self.groups == self.out_channels
    }

    fn check_geometry(&self) -> Result<()> {
        let ConvParams { in_channels: ci, out_channels: co, kernel: k, stride: s, groups: g, .. } = *self;
        if ci == 0 || co == 0 || k == 0 || s == 0 || g == 0 {
            return Err(Error::spec("conv", format!("zero dimension in conv {ci}->{co} k{k} s{s} g{g}")));
        }
        if ci % g != 0 || co % g != 0 {
            return Err(Error::spec("conv", format!("groups {g} must divide in {ci} and out {co}")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_geometry()?;
        if self.weight.len() != self.weight_len() {
            return Err(Error::shape(
                "conv2d",
                format!("weight has {} values, expected {}", self.weight.len(), self.weight_len()),
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::shape("conv2d", format!("bias has {} values for {} outputs", b.len(), self.out_channels)));
            }
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, conv expects {}", input.c, self.in_channels),
            ));
        }
        let oh = conv_output_size(input.h, self.kernel, self.stride, self.padding);
        let ow = conv_output_size(input.w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.out_channels, h, w)),
            _ => Err(Error::shape(
                "conv2d",
                format!("kernel {} does not fit input {}x{}", self.kernel, input.h, input.w),
            )),
        }
    }

    /// Multiply-accumulates for one forward pass producing `out`.
    pub fn macs(&self, out: Shape) -> u64 {
        (out.numel() * (self.in_channels / self.groups) * self.kernel * self.kernel) as u64
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f32>> = const { RefCell::new(Vec::new()) };
}

/// Forward convolution. Depthwise convs use a direct kernel, dense 3x3
/// stride-1 convs use Winograd F(2x2, 3x3) and everything else goes through
/// im2col + sgemm (1x1 stride-1 convs skip the im2col copy).
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate()?;
    let os = p.output_shape(input.shape())?;
    let mut out = Tensor::zeros(os);
    let is = input.shape();
    for n in 0..is.n {
        let x = &input.data()[n * is.c * is.plane()..(n + 1) * is.c * is.plane()];
        let y = &mut out.data_mut()[n * os.c * os.plane()..(n + 1) * os.c * os.plane()];
        if p.is_depthwise() {
            depthwise(x, y, p, is, os);
        } else if winograd::applies(p, os) {
            winograd::conv(x, y, p, is, os);
        } else {
            grouped_gemm(x, y, p, is, os);
        }
    }
    if let Some(b) = &p.bias {
        let plane = os.plane();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = b[i % os.c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

fn grouped_gemm(x: &[f32], y: &mut [f32], p: &ConvParams, is: Shape, os: Shape) {
    let cin = p.in_channels / p.groups;
    let cout = p.out_channels / p.groups;
    let kk = cin * p.kernel * p.kernel;
    let n = os.plane();
    let pointwise = p.kernel == 1 && p.stride == 1 && p.padding == 0;
    SCRATCH.with(|s| {
        let mut cols = s.borrow_mut();
        for g in 0..p.groups {
            let xg = &x[g * cin * is.plane()..(g + 1) * cin * is.plane()];
            let b: &[f32] = if pointwise {
                xg
            } else {
                cols.resize(kk * n, 0.0);
                im2col(xg, &mut cols, cin, is, os, p);
                &cols
            };
            let a = &p.weight[g * cout * kk..(g + 1) * cout * kk];
            let c = &mut y[g * cout * n..(g + 1) * cout * n];
            // SAFETY: a is cout x kk, b is kk x n, c is cout x n, all row-major and in bounds.
            unsafe {
                matrixmultiply::sgemm(
                    cout, kk, n, 1.0,
                    a.as_ptr(), kk as isize, 1,
                    b.as_ptr(), n as isize, 1,
                    0.0,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    });
}

// Valid output range [lo, hi) along one axis for kernel tap `t`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, t: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > t { (pad - t).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > t { ((in_len + pad - t - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col(x: &[f32], cols: &mut [f32], cin: usize, is: Shape, os: Shape, p: &ConvParams) {
    let k = p.kernel;
    let (s, pad) = (p.stride, p.padding);
    let n = os.plane();
    for c in 0..cin {
        let xc = &x[c * is.plane()..(c + 1) * is.plane()];
        for ky in 0..k {
            let (oy0, oy1) = valid_range(os.h, is.h, ky, s, pad);
            for kx in 0..k {
                let (ox0, ox1) = valid_range(os.w, is.w, kx, s, pad);
                let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                row.fill(0.0);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - pad;
                    let dst = &mut row[oy * os.w..(oy + 1) * os.w];
                    let src = &xc[iy * is.w..(iy + 1) * is.w];
                    if s == 1 {
                        let ix0 = ox0 + kx - pad;
                        dst[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * s + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

// Each channel is zero-padded and split into stride x stride phase planes of
// width `pw`. Output pixel (oy, ox) under tap (ky, kx) then reads phase
// (ky % s, kx % s) at (oy + ky / s, ox + kx / s), so every tap is one long
// contiguous axpy over an oh x pw grid. The pw - ow junk columns per row are
// dropped when copying out.
fn depthwise(x: &[f32], y: &mut [f32], p: &ConvParams, is: Shape, os: Shape) {
    let k = p.kernel;
    let (s, pad) = (p.stride, p.padding);
    let reach = (k - 1) / s;
    let pw = os.w + reach;
    // one spare row so junk columns of the last output row stay in bounds
    let ph = os.h + reach + 1;
    let plane = ph * pw;
    let mut phases = vec![0.0f32; s * s * plane];
    let mut acc = vec![0.0f32; os.h * pw];
    for c in 0..os.c {
        let xc = &x[c * is.plane()..(c + 1) * is.plane()];
        let wc = &p.weight[c * k * k..(c + 1) * k * k];
        for py in 0..s {
            for px in 0..s {
                let dst = &mut phases[(py * s + px) * plane..][..plane];
                for r in 0..ph {
                    let row = &mut dst[r * pw..(r + 1) * pw];
                    let Some(iy) = (r * s + py).checked_sub(pad).filter(|&iy| iy < is.h) else {
                        row.fill(0.0);
                        continue;
                    };
                    let src = &xc[iy * is.w..(iy + 1) * is.w];
                    // phase column j maps to input column j * s + px - pad
                    let (j0, j1) = valid_range(pw, is.w, px, s, pad);
                    row[..j0].fill(0.0);
                    row[j1..].fill(0.0);
                    if j0 >= j1 {
                        continue;
                    }
                    let first = j0 * s + px - pad;
                    if s == 1 {
                        row[j0..j1].copy_from_slice(&src[first..first + (j1 - j0)]);
                    } else {
                        for (d, v) in row[j0..j1].iter_mut().zip(src[first..].iter().step_by(s)) {
                            *d = *v;
                        }
                    }
                }
            }
        }
        acc.fill(0.0);
        let len = acc.len();
        let mut w = [0.0f32; 16];
        for ky in 0..k {
            for px in 0..s.min(k) {
                // taps kx = px, px + s, ... read consecutive columns of one phase
                let n = (k - px).div_ceil(s);
                for (t, wt) in w[..n].iter_mut().enumerate() {
                    *wt = wc[ky * k + px + t * s];
                }
                let base = ((ky % s) * s + px) * plane + (ky / s) * pw;
                accumulate(&mut acc, &phases[base..base + len + n - 1], &w[..n]);
            }
        }
        let yc = &mut y[c * os.plane()..(c + 1) * os.plane()];
        for (dst, src) in yc.chunks_exact_mut(os.w).zip(acc.chunks_exact(pw)) {
            dst.copy_from_slice(&src[..os.w]);
        }
    }
}

// acc[i] += sum_t w[t] * src[i + t], one pass over acc
fn accumulate(acc: &mut [f32], src: &[f32], w: &[f32]) {
    match w.len() {
        1 => taps::<1>(acc, src, [w[0]]),
        2 => taps::<2>(acc, src, [w[0], w[1]]),
        3 => taps::<3>(acc, src, [w[0], w[1], w[2]]),
        4 => taps::<4>(acc, src, [w[0], w[1], w[2], w[3]]),
        5 => taps::<5>(acc, src, [w[0], w[1], w[2], w[3], w[4]]),
        _ => {
            for (t, &wt) in w.iter().enumerate() {
                for (o, v) in acc.iter_mut().zip(&src[t..]) {
                    *o += wt * v;
                }
            }
        }
    }
}

#[inline(always)]
fn taps<const N: usize>(acc: &mut [f32], src: &[f32], w: [f32; N]) {
    let n = acc.len();
    let rows: [&[f32]; N] = std::array::from_fn(|t| &src[t..t + n]);
    for (i, o) in acc.iter_mut().enumerate() {
        let mut v = *o;
        for t in 0..N {
            v += w[t] * rows[t][i];
        }
        *o = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(416, 3, 2, 1), Some(208));
        assert_eq!(conv_output_size(13, 13, 1, 6), Some(13));
        assert_eq!(conv_output_size(2, 5, 1, 1), None);
    }

    #[test]
    fn identity_1x1() {
        let mut p = ConvParams::new(3, 3, 1, 1, 1).unwrap();
        for c in 0..3 {
            p.weight[c * 3 + c] = 1.0;
        }
        let x = Tensor::seeded(Shape::new(1, 3, 5, 4), 7);
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_3x3_on_ones_interior_is_nine() {
        let mut p = ConvParams::new(1, 1, 3, 1, 1).unwrap();
        p.weight.fill(1.0);
        let y = conv2d(&Tensor::filled(Shape::new(1, 1, 5, 5), 1.0), &p).unwrap();
        assert_eq!(y.at(0, 0, 2, 2), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let p = ConvParams::new(4, 8, 3, 1, 1).unwrap();
        let err = conv2d(&Tensor::zeros(Shape::new(1, 3, 8, 8)), &p).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn bad_groups_rejected() {
        assert!(ConvParams::new(6, 4, 3, 1, 4).is_err());
    }

    #[test]
    fn valid_range_edges() {
        // 5 outputs, stride 1, pad 1, tap 0 reads x[-1] at ox = 0
        assert_eq!(valid_range(5, 5, 0, 1, 1), (1, 5));
        assert_eq!(valid_range(5, 5, 2, 1, 1), (0, 4));
        // stride 2, 8 -> 4, pad 1
        assert_eq!(valid_range(4, 8, 0, 2, 1), (1, 4));
        assert_eq!(valid_range(4, 8, 2, 2, 1), (0, 4));
    }
}
