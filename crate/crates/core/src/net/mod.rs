//! Declarative detector descriptions and their assembly into graphs.

mod backbone;
mod fpn;
mod head;

pub use backbone::{build_backbone, make_divisible, yolox_depths};
pub use fpn::build_fpn;
pub use head::{build_head, decode_predictions, head_outputs, Detection, HeadOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Component, Graph, GraphBuilder, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneFamily {
    CspDarknet,
    PpLcNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MainOp {
    CspLayer,
    MbConv,
    FusedMbConv,
    /// FusedMbConv in the first `fused_stage_count` stages, MbConv after.
    Mixed,
    Sandglass,
    RegNetX,
    DsConv,
    BsConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub main_op: MainOp,
    #[serde(default)]
    pub fused_stage_count: usize,
    #[serde(default = "one")]
    pub expand_ratio: f64,
    pub width_multiplier: f64,
    pub depth_multiplier: f64,
    #[serde(default = "one_usize")]
    pub channel_multiplier: usize,
    /// Sandglass reduction ratio.
    #[serde(default = "half")]
    pub reduce_ratio: f64,
    /// Channels per group in RegNetX blocks.
    #[serde(default = "one_usize")]
    pub group_width: usize,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn five() -> usize {
    5
}

impl BackboneSpec {
    pub fn csp_darknet(main_op: MainOp) -> Self {
        BackboneSpec {
            family: BackboneFamily::CspDarknet,
            main_op,
            fused_stage_count: 0,
            expand_ratio: 1.0,
            width_multiplier: 0.375,
            depth_multiplier: 0.33,
            channel_multiplier: 1,
            reduce_ratio: 0.5,
            group_width: 1,
        }
    }

    pub fn pp_lcnet(main_op: MainOp, channel_multiplier: usize) -> Self {
        BackboneSpec { family: BackboneFamily::PpLcNet, channel_multiplier, ..Self::csp_darknet(main_op) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::spec("backbone", d));
        if self.width_multiplier.is_nan() || self.width_multiplier <= 0.0 || self.depth_multiplier.is_nan() || self.depth_multiplier <= 0.0 {
            return bad(format!(
                "multipliers must be positive (width {}, depth {})",
                self.width_multiplier, self.depth_multiplier
            ));
        }
        if self.expand_ratio.is_nan() || self.expand_ratio <= 0.0 || self.reduce_ratio.is_nan() || self.reduce_ratio <= 0.0 {
            return bad("expand and reduce ratios must be positive".into());
        }
        if !matches!(self.channel_multiplier, 1 | 2) {
            return bad(format!("channel_multiplier {} not in {{1, 2}}", self.channel_multiplier));
        }
        if self.fused_stage_count > 4 {
            return bad(format!("fused_stage_count {} exceeds 4 stages", self.fused_stage_count));
        }
        if self.fused_stage_count != 0 && self.main_op != MainOp::Mixed {
            return bad("fused_stage_count only applies to the Mixed main op".into());
        }
        if self.group_width == 0 {
            return bad("group_width must be positive".into());
        }
        let ok = match self.family {
            BackboneFamily::CspDarknet => !matches!(self.main_op, MainOp::DsConv | MainOp::BsConv),
            BackboneFamily::PpLcNet => matches!(self.main_op, MainOp::DsConv | MainOp::BsConv),
        };
        if !ok {
            return bad(format!("{:?} is not available in the {:?} family", self.main_op, self.family));
        }
        if self.family == BackboneFamily::CspDarknet && self.channel_multiplier != 1 {
            return bad("channel_multiplier applies to the PpLcNet family".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FpnKind {
    #[serde(rename = "PAFPN")]
    Pafpn,
    #[serde(rename = "LCPAN")]
    Lcpan,
    #[serde(rename = "SepFPN")]
    SepFpn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MergeKind {
    Concat,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpnSpec {
    pub kind: FpnKind,
    pub merge: MergeKind,
    /// Equalized width (LCPAN only).
    pub fpn_channels: usize,
    /// Repeats inside each CSP merge block (PAFPN, SepFPN).
    pub inner_depth: usize,
    /// Depthwise kernel of LCPAN blocks.
    #[serde(default = "five")]
    pub kernel: usize,
}

impl FpnSpec {
    pub fn new(kind: FpnKind, merge: MergeKind) -> Self {
        FpnSpec { kind, merge, fpn_channels: 96, inner_depth: 1, kernel: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fpn_channels == 0 || self.inner_depth == 0 {
            return Err(Error::spec("fpn", "fpn_channels and inner_depth must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::spec("fpn", format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub num_classes: usize,
    pub head_width: usize,
    #[serde(default = "three")]
    pub levels: usize,
}

fn three() -> usize {
    3
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.head_width == 0 {
            return Err(Error::spec("head", "num_classes and head_width must be positive"));
        }
        if self.levels != 3 {
            return Err(Error::spec("head", format!("{} levels; the detector has 3", self.levels)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Square input side; must be a multiple of 32.
    pub input_size: usize,
    pub backbone: BackboneSpec,
    pub fpn: FpnSpec,
    pub head: HeadSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::InputSize { h: self.input_size, w: self.input_size, divisor: 32 });
        }
        self.backbone.validate()?;
        self.fpn.validate()?;
        self.head.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Strides of the three pyramid levels.
pub const LEVEL_STRIDES: [usize; 3] = [8, 16, 32];
pub const BACKBONE_TAPS: [&str; 3] = ["dark3", "dark4", "dark5"];
pub const FPN_TAPS: [&str; 3] = ["fpn_p3", "fpn_p4", "fpn_p5"];

fn seam(from: &str, to: &str, e: Error) -> Error {
    match e {
        Error::Spec { what, detail } => Error::spec("seam", format!("{from} -> {to}: {what}: {detail}")),
        other => other,
    }
}

/// Assemble the full detector with BN still separate from its convs.
pub fn build(model: &ModelSpec, seed: u64) -> Result<Graph> {
    model.validate()?;
    let mut b = GraphBuilder::new(model.name.clone(), 3, seed);
    b.set_component(Component::Backbone);
    let taps = b.scoped("backbone", |b| build_backbone(b, &model.backbone, GraphBuilder::INPUT))?;
    for (name, id) in BACKBONE_TAPS.iter().zip(taps) {
        b.set_tap(*name, id);
    }
    b.set_component(Component::Fpn);
    let outs = b
        .scoped("fpn", |b| build_fpn(b, &model.fpn, taps))
        .map_err(|e| seam("backbone", "fpn", e))?;
    check_levels(&b, &outs, "fpn")?;
    for (name, id) in FPN_TAPS.iter().zip(outs) {
        b.set_tap(*name, id);
    }
    b.set_component(Component::Head);
    let heads = b
        .scoped("head", |b| build_head(b, &model.head, outs))
        .map_err(|e| seam("fpn", "head", e))?;
    let mut outputs = Vec::new();
    for (lvl, [cls, reg, obj]) in heads.into_iter().enumerate() {
        for (kind, id) in [("reg", reg), ("obj", obj), ("cls", cls)] {
            let name = format!("head_p{}_{kind}", lvl + 3);
            b.set_tap(name.clone(), id);
            outputs.push(name);
        }
    }
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    b.finish(&names)
}

fn check_levels(b: &GraphBuilder, ids: &[NodeId; 3], what: &str) -> Result<()> {
    for (id, s) in ids.iter().zip(LEVEL_STRIDES) {
        if b.stride(*id) != s {
            return Err(Error::spec("seam", format!("{what} level at stride {} where {s} expected", b.stride(*id))));
        }
    }
    Ok(())
}

/// Build and fold BN into the convs: the graph that is benchmarked.
pub fn compile(model: &ModelSpec) -> Result<Graph> {
    let mut g = build(model, 0)?;
    g.fold_batchnorm()?;
    Ok(g)
}
