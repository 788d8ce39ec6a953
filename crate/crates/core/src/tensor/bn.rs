use rand::Rng;

use super::{ConvParams, Tensor};
use crate::error::{Error, Result};

/// Inference-mode batch norm: y = gamma * (x - mean) / sqrt(var + eps) + beta.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 1e-3,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Plausible trained-looking statistics; keeps activations near unit scale.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R) {
        for i in 0..self.channels() {
            self.gamma[i] = rng.gen_range(0.5..1.5);
            self.beta[i] = rng.gen_range(-0.2..0.2);
            self.mean[i] = rng.gen_range(-0.2..0.2);
            self.var[i] = rng.gen_range(0.5..1.5);
        }
    }

    fn check(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return Err(Error::shape("batch_norm", "gamma/beta/mean/var lengths differ"));
        }
        Ok(())
    }

    fn scale(&self, c: usize) -> f32 {
        self.gamma[c] / (self.var[c] + self.eps).sqrt()
    }
}

pub fn batch_norm(input: &Tensor, bn: &BatchNormParams) -> Result<Tensor> {
    let mut out = input.clone();
    batch_norm_inplace(&mut out, bn)?;
    Ok(out)
}

pub fn batch_norm_inplace(t: &mut Tensor, bn: &BatchNormParams) -> Result<()> {
    bn.check()?;
    let s = t.shape();
    if s.c != bn.channels() {
        return Err(Error::shape("batch_norm", format!("{} channels vs {} BN channels", s.c, bn.channels())));
    }
    for (i, plane) in t.data_mut().chunks_mut(s.plane()).enumerate() {
        let c = i % s.c;
        let (k, m, b) = (bn.scale(c), bn.mean[c], bn.beta[c]);
        plane.iter_mut().for_each(|v| *v = (*v - m) * k + b);
    }
    Ok(())
}

/// Fold BN into the preceding conv: w' = w * g / sqrt(v + eps), b' = (b - m) * g / sqrt(v + eps) + beta.
/// The result always carries a bias.
pub fn fold_batchnorm(conv: &ConvParams, bn: &BatchNormParams) -> Result<ConvParams> {
    bn.check()?;
    conv.validate()?;
    if conv.out_channels != bn.channels() {
        return Err(Error::shape(
            "fold_batchnorm",
            format!("conv has {} outputs, BN has {} channels", conv.out_channels, bn.channels()),
        ));
    }
    let per_out = conv.weight_len() / conv.out_channels;
    let mut folded = conv.clone();
    let mut bias = vec![0.0; conv.out_channels];
    for o in 0..conv.out_channels {
        let k = bn.scale(o);
        folded.weight[o * per_out..(o + 1) * per_out].iter_mut().for_each(|w| *w *= k);
        let b0 = conv.bias.as_ref().map_or(0.0, |b| b[o]);
        bias[o] = (b0 - bn.mean[o]) * k + bn.beta[o];
    }
    folded.bias = Some(bias);
    Ok(folded)
}
