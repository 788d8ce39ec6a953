use super::{BackboneFamily, BackboneSpec, MainOp};
use crate::blocks::{emit_block, BlockKind, BlockSpec};
use crate::error::Result;
use crate::graph::{ConvOpts, GraphBuilder, NodeId};
use crate::tensor::Activation;

/// YOLOX stage repeats: base = max(round(3 * d), 1), stages base * (1, 3, 3, 1).
pub fn yolox_depths(depth_multiplier: f64) -> [usize; 4] {
    let base = ((3.0 * depth_multiplier).round() as usize).max(1);
    [base, 3 * base, 3 * base, base]
}

/// Round to a multiple of `divisor`, never dropping more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((v + d / 2.0) / d).floor() * d).max(d);
    if n < 0.9 * v {
        n += d;
    }
    n as usize
}

/// Emit the backbone after `x` and return the stride 8/16/32 taps.
pub fn build_backbone(b: &mut GraphBuilder, spec: &BackboneSpec, x: NodeId) -> Result<[NodeId; 3]> {
    spec.validate()?;
    match spec.family {
        BackboneFamily::CspDarknet => csp_darknet(b, spec, x),
        BackboneFamily::PpLcNet => pp_lcnet(b, spec, x),
    }
}

fn csp_darknet(b: &mut GraphBuilder, spec: &BackboneSpec, x: NodeId) -> Result<[NodeId; 3]> {
    let act = Activation::Silu;
    let base = (64.0 * spec.width_multiplier) as usize;
    let widths = [2 * base, 4 * base, 8 * base, 16 * base];
    let depths = yolox_depths(spec.depth_multiplier);

    let focus = BlockSpec::new(BlockKind::Focus, b.channels(x), base).act(act);
    let mut y = b.scoped("stem", |b| emit_block(b, &focus, x))?;
    let mut taps = Vec::new();
    for (i, (&w, &n)) in widths.iter().zip(&depths).enumerate() {
        let last = i == 3;
        y = b.scoped(format!("dark{}", i + 2), |b| {
            if spec.main_op == MainOp::CspLayer {
                let mut y = b.conv("down", y, w, ConvOpts::cba(3, 2, act))?;
                if last {
                    let spp = BlockSpec::new(BlockKind::SppBottleneck, w, w).act(act);
                    y = b.scoped("spp", |b| emit_block(b, &spp, y))?;
                }
                let csp = BlockSpec::new(BlockKind::CspLayer, w, w).depth(n).act(act).residual(!last);
                b.scoped("csp", |b| emit_block(b, &csp, y))
            } else if last {
                // final stage keeps the dense downsampler and SPP, then n plain blocks
                let mut y = b.conv("down", y, w, ConvOpts::cba(3, 2, act))?;
                let spp = BlockSpec::new(BlockKind::SppBottleneck, w, w).act(act);
                y = b.scoped("spp", |b| emit_block(b, &spp, y))?;
                for j in 0..n {
                    let blk = bottleneck(spec, i, w, w, 1, false);
                    y = b.scoped(j.to_string(), |b| emit_block(b, &blk, y))?;
                }
                Ok(y)
            } else {
                // the first block of the stage does the downsampling
                let mut y = y;
                for j in 0..n {
                    let blk = if j == 0 {
                        bottleneck(spec, i, b.channels(y), w, 2, false)
                    } else {
                        bottleneck(spec, i, w, w, 1, true)
                    };
                    y = b.scoped(j.to_string(), |b| emit_block(b, &blk, y))?;
                }
                Ok(y)
            }
        })?;
        if i >= 1 {
            taps.push(y);
        }
    }
    Ok([taps[0], taps[1], taps[2]])
}

fn bottleneck(spec: &BackboneSpec, stage: usize, ci: usize, co: usize, stride: usize, residual: bool) -> BlockSpec {
    let kind = match spec.main_op {
        MainOp::MbConv => BlockKind::MbConv,
        MainOp::FusedMbConv => BlockKind::FusedMbConv,
        MainOp::Mixed if stage < spec.fused_stage_count => BlockKind::FusedMbConv,
        MainOp::Mixed => BlockKind::MbConv,
        MainOp::Sandglass => BlockKind::Sandglass,
        MainOp::RegNetX => BlockKind::RegNetX,
        MainOp::CspLayer | MainOp::DsConv | MainOp::BsConv => unreachable!("not a bottleneck op"),
    };
    BlockSpec::new(kind, ci, co)
        .stride(stride)
        .expand(spec.expand_ratio)
        .reduce(spec.reduce_ratio)
        .group_width(spec.group_width)
        .residual(residual)
        .act(Activation::Silu)
}

// (kernel, in, out, stride, squeeze-excite) at scale 1; stages map onto the
// four-stage convention as [b2 + b3], [b4], [b5], [b6].
type LcBlock = (usize, usize, usize, usize, bool);

const LCNET_STAGES: [&[LcBlock]; 4] = [
    &[(3, 16, 32, 1, false), (3, 32, 64, 2, false), (3, 64, 64, 1, false)],
    &[(3, 64, 128, 2, false), (3, 128, 128, 1, false)],
    &[
        (3, 128, 256, 2, false),
        (5, 256, 256, 1, false),
        (5, 256, 256, 1, false),
        (5, 256, 256, 1, false),
        (5, 256, 256, 1, false),
        (5, 256, 256, 1, false),
    ],
    &[(5, 256, 512, 2, true), (5, 512, 512, 1, true)],
];

fn pp_lcnet(b: &mut GraphBuilder, spec: &BackboneSpec, x: NodeId) -> Result<[NodeId; 3]> {
    let act = Activation::HardSwish;
    // at width 0.375 the x1 net emits (96, 192, 384), matching the CSPDarknet taps
    let scale = 2.0 * spec.width_multiplier * spec.channel_multiplier as f64;
    let ch = |c: usize| make_divisible(c as f64 * scale, 8);
    let kind = if spec.main_op == MainOp::DsConv { BlockKind::DsConv } else { BlockKind::BsConv };

    let mut y = b.scoped("stem", |b| b.conv("conv", x, ch(16), ConvOpts::cba(3, 2, act)))?;
    let mut taps = Vec::new();
    for (i, layers) in LCNET_STAGES.iter().enumerate() {
        y = b.scoped(format!("dark{}", i + 2), |b| {
            let mut y = y;
            for (j, &(k, ci, co, s, se)) in layers.iter().enumerate() {
                let blk = BlockSpec::new(kind, ch(ci), ch(co)).kernel(k).stride(s).se(se).act(act);
                y = b.scoped(j.to_string(), |b| emit_block(b, &blk, y))?;
            }
            Ok(y)
        })?;
        if i >= 1 {
            taps.push(y);
        }
    }
    Ok([taps[0], taps[1], taps[2]])
}
