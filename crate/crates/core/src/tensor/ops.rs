use super::{conv_output_size, Shape, Tensor};
use crate::error::{Error, Result};

/// Max pooling with -inf padding; padded cells never win.
pub fn max_pool(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let s = input.shape();
    if kernel == 0 || stride == 0 || padding > kernel / 2 {
        return Err(Error::spec("max_pool", format!("kernel {kernel}, stride {stride}, padding {padding}")));
    }
    let (oh, ow) = match (
        conv_output_size(s.h, kernel, stride, padding),
        conv_output_size(s.w, kernel, stride, padding),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::shape(
                "max_pool",
                format!("kernel {kernel} exceeds padded input {}x{}", s.h, s.w),
            ))
        }
    };
    let os = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    let span = |o: usize, len: usize| {
        ((o * stride).saturating_sub(padding), (o * stride + kernel).saturating_sub(padding).min(len))
    };
    // separable: max along rows into `rows`, then along columns
    let mut rows = vec![0.0f32; s.h * ow];
    for (plane_idx, dst) in out.data_mut().chunks_mut(os.plane()).enumerate() {
        let x = &src[plane_idx * s.plane()..(plane_idx + 1) * s.plane()];
        for iy in 0..s.h {
            let xr = &x[iy * s.w..(iy + 1) * s.w];
            for ox in 0..ow {
                let (x0, x1) = span(ox, s.w);
                rows[iy * ow + ox] = xr[x0..x1].iter().fold(f32::NEG_INFINITY, |m, &v| if v > m { v } else { m });
            }
        }
        for oy in 0..oh {
            let (y0, y1) = span(oy, s.h);
            let d = &mut dst[oy * ow..(oy + 1) * ow];
            d.copy_from_slice(&rows[y0 * ow..(y0 + 1) * ow]);
            for iy in y0 + 1..y1 {
                for (m, &v) in d.iter_mut().zip(&rows[iy * ow..(iy + 1) * ow]) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample_nearest2x(input: &Tensor) -> Tensor {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    for (p, dst) in out.data_mut().chunks_mut(os.plane()).enumerate() {
        let x = &src[p * s.plane()..(p + 1) * s.plane()];
        for y in 0..os.h {
            let row = &x[(y / 2) * s.w..(y / 2 + 1) * s.w];
            for (xo, d) in dst[y * os.w..(y + 1) * os.w].iter_mut().enumerate() {
                *d = row[xo / 2];
            }
        }
    }
    out
}

pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?.shape();
    let mut c = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat", format!("{s} vs {first}")));
        }
        c += s.c;
    }
    let os = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for t in inputs {
            let per = t.shape().c * t.shape().plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(os, data)
}

pub fn add_elementwise(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{} vs {}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    Ok(out)
}

/// Phase order is (even row, even col), (odd row, even col), (even row, odd col),
/// (odd row, odd col); each phase is a block of c channels.
pub fn space_to_depth2x(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape("space_to_depth2x", format!("odd spatial dims {}x{}", s.h, s.w)));
    }
    let os = Shape::new(s.n, 4 * s.c, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for (phase, (dy, dx)) in PHASES.iter().enumerate() {
            for c in 0..s.c {
                for y in 0..os.h {
                    for x in 0..os.w {
                        let v = input.at(n, c, 2 * y + dy, 2 * x + dx);
                        let i = out.index(n, phase * s.c + c, y, x);
                        out.data_mut()[i] = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`space_to_depth2x`].
pub fn depth_to_space2x(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if !s.c.is_multiple_of(4) {
        return Err(Error::shape("depth_to_space2x", format!("{} channels not divisible by 4", s.c)));
    }
    let c = s.c / 4;
    let os = Shape::new(s.n, c, s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for (phase, (dy, dx)) in PHASES.iter().enumerate() {
            for ch in 0..c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let v = input.at(n, phase * c + ch, y, x);
                        let i = out.index(n, ch, 2 * y + dy, 2 * x + dx);
                        out.data_mut()[i] = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

const PHASES: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let s = input.shape();
    let inv = 1.0 / s.plane() as f32;
    let data = input.data().chunks(s.plane()).map(|p| p.iter().sum::<f32>() * inv).collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("one value per plane")
}

/// Multiply every plane of `input` by the matching (n, c, 1, 1) gate value.
pub fn channel_scale(input: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (s, g) = (input.shape(), gate.shape());
    if g != Shape::new(s.n, s.c, 1, 1) {
        return Err(Error::shape("channel_scale", format!("gate {g} for input {s}")));
    }
    let mut out = input.clone();
    for (plane, gv) in out.data_mut().chunks_mut(s.plane()).zip(gate.data()) {
        plane.iter_mut().for_each(|v| *v *= gv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_constant_map() {
        let x = Tensor::filled(Shape::new(1, 2, 4, 4), 1.0);
        let y = max_pool(&x, 5, 1, 2).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pool_kernel_too_big() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(max_pool(&x, 9, 1, 0).is_err());
    }

    #[test]
    fn pool_picks_max_across_padding() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-5.0, -7.0, -6.0]).unwrap();
        let y = max_pool(&x, 3, 1, 1).unwrap();
        assert_eq!(y.data(), &[-5.0, -5.0, -6.0]);
    }

    #[test]
    fn focus_phase_order() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = space_to_depth2x(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(y.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn focus_shapes_and_errors() {
        let y = space_to_depth2x(&Tensor::zeros(Shape::new(1, 3, 416, 416))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 12, 208, 208));
        assert!(space_to_depth2x(&Tensor::zeros(Shape::new(1, 3, 5, 4))).is_err());
    }

    #[test]
    fn upsample_repeats() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let y = upsample_nearest2x(&x);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_add_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 3, 4, 4));
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape().c, 5);
        assert!(add_elementwise(&a, &b).is_err());
        assert!(concat_channels(&[&a, &Tensor::zeros(Shape::new(1, 2, 2, 2))]).is_err());
    }

    #[test]
    fn gap_and_scale() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, 3.0, -2.0, 2.0]).unwrap();
        let g = global_avg_pool(&x);
        assert_eq!(g.data(), &[2.0, 0.0]);
        let y = channel_scale(&x, &g).unwrap();
        assert_eq!(y.data(), &[2.0, 6.0, 0.0, 0.0]);
    }
}
