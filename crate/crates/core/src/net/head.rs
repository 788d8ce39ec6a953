use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::HeadSpec;
use crate::error::{Error, Result};
use crate::graph::{ConvOpts, GraphBuilder, NodeId};
use crate::tensor::{Activation, Tensor};

const ACT: Activation = Activation::Silu;

/// Decoupled anchor-free head; returns [cls, reg, obj] per level.
pub fn build_head(b: &mut GraphBuilder, spec: &HeadSpec, inputs: [NodeId; 3]) -> Result<Vec<[NodeId; 3]>> {
    spec.validate()?;
    let w = spec.head_width;
    let mut out = Vec::with_capacity(3);
    for (lvl, &x) in inputs.iter().enumerate() {
        let ids = b.scoped(format!("p{}", lvl + 3), |b| {
            let stem = b.conv("stem", x, w, ConvOpts::cba(1, 1, ACT))?;
            let mut cls = stem;
            let mut reg = stem;
            for i in 0..2 {
                cls = b.conv(&format!("cls_conv{i}"), cls, w, ConvOpts::cba(3, 1, ACT))?;
                reg = b.conv(&format!("reg_conv{i}"), reg, w, ConvOpts::cba(3, 1, ACT))?;
            }
            let cls_pred = b.conv("cls_pred", cls, spec.num_classes, ConvOpts::biased(1))?;
            let reg_pred = b.conv("reg_pred", reg, 4, ConvOpts::biased(1))?;
            let obj_pred = b.conv("obj_pred", reg, 1, ConvOpts::biased(1))?;
            Ok([cls_pred, reg_pred, obj_pred])
        })?;
        out.push(ids);
    }
    Ok(out)
}

/// Raw head tensors for one pyramid level.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub stride: usize,
    pub cls: Tensor,
    pub reg: Tensor,
    pub obj: Tensor,
}

/// Pull the per-level head tensors out of a forward result.
pub fn head_outputs(values: &BTreeMap<String, Tensor>, strides: [usize; 3]) -> Result<Vec<HeadOutput>> {
    let get = |lvl: usize, kind: &str| {
        let key = format!("head_p{}_{kind}", lvl + 3);
        values.get(&key).cloned().ok_or_else(|| Error::spec("decode", format!("missing head output '{key}'")))
    };
    (0..3)
        .map(|lvl| {
            Ok(HeadOutput { stride: strides[lvl], cls: get(lvl, "cls")?, reg: get(lvl, "reg")?, obj: get(lvl, "obj")? })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: usize,
    /// (cx, cy, w, h) in input pixels.
    pub bbox: [f32; 4],
    /// Sigmoid of the objectness logit.
    pub objectness: f32,
    /// Sigmoid of the class logits.
    pub class_scores: Vec<f32>,
}

/// Anchor-free decode: center = (cell + offset) * stride, size = exp(pred) * stride.
/// One detection per grid cell per level, no thresholding.
pub fn decode_predictions(levels: &[HeadOutput]) -> Vec<Detection> {
    let mut dets = Vec::new();
    let Some(first) = levels.first() else { return dets };
    for n in 0..first.reg.shape().n {
        for lvl in levels {
            let s = lvl.reg.shape();
            let stride = lvl.stride as f32;
            let nc = lvl.cls.shape().c;
            for y in 0..s.h {
                for x in 0..s.w {
                    let r = |c| lvl.reg.at(n, c, y, x);
                    dets.push(Detection {
                        image: n,
                        bbox: [
                            (x as f32 + r(0)) * stride,
                            (y as f32 + r(1)) * stride,
                            r(2).exp() * stride,
                            r(3).exp() * stride,
                        ],
                        objectness: Activation::Sigmoid.apply(lvl.obj.at(n, 0, y, x)),
                        class_scores: (0..nc).map(|c| Activation::Sigmoid.apply(lvl.cls.at(n, c, y, x))).collect(),
                    });
                }
            }
        }
    }
    dets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn level(stride: usize, side: usize, reg: Vec<f32>) -> HeadOutput {
        HeadOutput {
            stride,
            cls: Tensor::zeros(Shape::new(1, 2, side, side)),
            reg: Tensor::from_vec(Shape::new(1, 4, side, side), reg).unwrap(),
            obj: Tensor::zeros(Shape::new(1, 1, side, side)),
        }
    }

    #[test]
    fn zero_outputs_center_on_cells() {
        let dets = decode_predictions(&[level(8, 2, vec![0.0; 16])]);
        assert_eq!(dets.len(), 4);
        assert_eq!(dets[3].bbox, [8.0, 8.0, 8.0, 8.0]);
        assert_eq!(dets[0].objectness, 0.5);
    }

    #[test]
    fn half_offset_at_origin() {
        let dets = decode_predictions(&[level(8, 1, vec![0.5, 0.5, 0.0, 1.0])]);
        assert_eq!(dets[0].bbox[0], 4.0);
        assert_eq!(dets[0].bbox[1], 4.0);
        assert!((dets[0].bbox[3] - 8.0 * 1f32.exp()).abs() < 1e-5);
    }
}
