//! Dense f32 tensors in (n, c, h, w) row-major layout and the primitive ops
//! every detector in this crate is assembled from.

mod activation;
mod bn;
mod conv;
mod winograd;
mod ops;

pub use activation::Activation;
pub use bn::{batch_norm, batch_norm_inplace, fold_batchnorm, BatchNormParams};
pub use conv::{conv2d, conv_output_size, ConvParams};
pub use ops::{
    add_elementwise, channel_scale, concat_channels, depth_to_space2x, global_avg_pool, max_pool,
    space_to_depth2x, upsample_nearest2x,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Uniform values in [-1, 1) from a ChaCha stream; same seed, same tensor.
    pub fn seeded(shape: Shape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(n, c, h, w)]
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs())))
    }
}
