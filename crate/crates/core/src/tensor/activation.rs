use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Silu,
    Sigmoid,
    HardSigmoid,
    HardSwish,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::HardSigmoid => hard_sigmoid(x),
            Activation::HardSwish => x * hard_sigmoid(x),
        }
    }

    pub fn apply_inplace(self, data: &mut [f32]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Silu => data.iter_mut().for_each(|v| *v = silu_fast(*v)),
            Activation::Sigmoid => data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + exp_fast(-*v))),
            Activation::HardSigmoid => data.iter_mut().for_each(|v| *v = hard_sigmoid(*v)),
            Activation::HardSwish => data.iter_mut().for_each(|v| *v *= hard_sigmoid(*v)),
        }
    }
}

// exp via range reduction and a degree-6 polynomial; relative error ~2e-7,
// well under f32 conv noise. Rounding uses the 1.5 * 2^23 trick so the whole
// thing stays in SSE2 lanes (f32::round and float->int casts do not).
#[inline(always)]
fn exp_fast(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let m = x * std::f32::consts::LOG2_E + MAGIC;
    let k = m - MAGIC;
    let r = x - k * 0.693_145_75 - k * 1.428_606_8e-6;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (0.166_666_67 + r * (0.041_666_41 + r * (0.008_333_6 + r * 0.001_394_3)))));
    let ki = m.to_bits().wrapping_sub(MAGIC.to_bits());
    f32::from_bits(ki.wrapping_add(127) << 23) * p
}

#[inline(always)]
fn hard_sigmoid(x: f32) -> f32 {
    (x + 3.0).clamp(0.0, 6.0) * (1.0 / 6.0)
}

#[inline(always)]
fn silu_fast(x: f32) -> f32 {
    x / (1.0 + exp_fast(-x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_libm() {
        let mut worst = 0.0f32;
        let mut x = -80.0f32;
        while x < 80.0 {
            let rel = ((exp_fast(x) - x.exp()) / x.exp()).abs();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn silu_inplace_matches_scalar() {
        let mut v: Vec<f32> = (-200..200).map(|i| i as f32 * 0.07).collect();
        let want: Vec<f32> = v.iter().map(|&x| Activation::Silu.apply(x)).collect();
        Activation::Silu.apply_inplace(&mut v);
        for (a, b) in v.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn hard_variants() {
        assert_eq!(Activation::HardSigmoid.apply(-4.0), 0.0);
        assert_eq!(Activation::HardSigmoid.apply(4.0), 1.0);
        assert_eq!(Activation::HardSigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::HardSwish.apply(3.0), 3.0);
        assert_eq!(Activation::HardSwish.apply(-3.0), 0.0);
    }
}
