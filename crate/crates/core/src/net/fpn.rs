use super::{FpnKind, FpnSpec, MergeKind};
use crate::blocks::{emit_block, BlockKind, BlockSpec};
use crate::error::{Error, Result};
use crate::graph::{ConvOpts, GraphBuilder, NodeId};
use crate::tensor::Activation;

const ACT: Activation = Activation::Silu;

/// Emit the FPN over backbone taps (stride 8, 16, 32); returns outputs at the same strides.
pub fn build_fpn(b: &mut GraphBuilder, spec: &FpnSpec, taps: [NodeId; 3]) -> Result<[NodeId; 3]> {
    spec.validate()?;
    match spec.kind {
        FpnKind::Pafpn => pafpn(b, spec, taps),
        FpnKind::SepFpn => sepfpn(b, spec, taps),
        FpnKind::Lcpan => lcpan(b, spec, taps),
    }
}

/// Join a trunk and a skip branch. Sum inserts a 1x1 lateral on the skip
/// branch when widths differ.
fn merge(b: &mut GraphBuilder, name: &str, kind: MergeKind, trunk: NodeId, skip: NodeId) -> Result<NodeId> {
    match kind {
        MergeKind::Concat => b.concat(name, &[trunk, skip]),
        MergeKind::Sum => {
            let ct = b.channels(trunk);
            let skip = if b.channels(skip) != ct {
                b.conv(&format!("{name}_lateral"), skip, ct, ConvOpts::cba(1, 1, ACT))?
            } else {
                skip
            };
            b.add(name, trunk, skip, Activation::Identity)
        }
    }
}

fn csp(b: &mut GraphBuilder, name: &str, x: NodeId, out: usize, depth: usize) -> Result<NodeId> {
    let spec = BlockSpec::new(BlockKind::CspLayer, b.channels(x), out).depth(depth).act(ACT);
    b.scoped(name, |b| emit_block(b, &spec, x))
}

struct TopDown {
    /// stride-16 lateral (c5 -> c4) reused by the bottom-up path
    lat5: NodeId,
    /// stride-16 merged features
    p4: NodeId,
    /// stride-8 lateral (c4 -> c3)
    lat4: NodeId,
    /// stride-8 output
    p3: NodeId,
}

fn top_down(b: &mut GraphBuilder, spec: &FpnSpec, [x3, x4, x5]: [NodeId; 3]) -> Result<TopDown> {
    let (c3, c4) = (b.channels(x3), b.channels(x4));
    let lat5 = b.conv("lateral_conv0", x5, c4, ConvOpts::cba(1, 1, ACT))?;
    let up = b.upsample("upsample0", lat5)?;
    let m = merge(b, "merge_p4", spec.merge, up, x4)?;
    let p4 = csp(b, "c3_p4", m, c4, spec.inner_depth)?;
    let lat4 = b.conv("reduce_conv1", p4, c3, ConvOpts::cba(1, 1, ACT))?;
    let up = b.upsample("upsample1", lat4)?;
    let m = merge(b, "merge_p3", spec.merge, up, x3)?;
    let p3 = csp(b, "c3_p3", m, c3, spec.inner_depth)?;
    Ok(TopDown { lat5, p4, lat4, p3 })
}

fn pafpn(b: &mut GraphBuilder, spec: &FpnSpec, taps: [NodeId; 3]) -> Result<[NodeId; 3]> {
    let (c4, c5) = (b.channels(taps[1]), b.channels(taps[2]));
    let td = top_down(b, spec, taps)?;
    let c3 = b.channels(td.p3);
    let d = b.conv("bu_conv2", td.p3, c3, ConvOpts::cba(3, 2, ACT))?;
    let m = merge(b, "merge_n3", spec.merge, d, td.lat4)?;
    let n4 = csp(b, "c3_n3", m, c4, spec.inner_depth)?;
    let d = b.conv("bu_conv1", n4, c4, ConvOpts::cba(3, 2, ACT))?;
    let m = merge(b, "merge_n4", spec.merge, d, td.lat5)?;
    let n5 = csp(b, "c3_n4", m, c5, spec.inner_depth)?;
    Ok([td.p3, n4, n5])
}

fn residual(b: &mut GraphBuilder, name: &str, y: NodeId, x: NodeId) -> Result<NodeId> {
    let cy = b.channels(y);
    let x = if b.channels(x) != cy { b.conv(&format!("{name}_lateral"), x, cy, ConvOpts::cba(1, 1, ACT))? } else { x };
    b.add(name, y, x, Activation::Identity)
}

/// Top-down path only; each output gets an identity path from the backbone tap.
fn sepfpn(b: &mut GraphBuilder, spec: &FpnSpec, taps: [NodeId; 3]) -> Result<[NodeId; 3]> {
    let [x3, x4, x5] = taps;
    let td = top_down(b, spec, taps)?;
    let o3 = residual(b, "res_p3", td.p3, x3)?;
    let o4 = residual(b, "res_p4", td.p4, x4)?;
    let c5 = b.channels(x5);
    let p5 = csp(b, "c3_p5", x5, c5, spec.inner_depth)?;
    let o5 = residual(b, "res_p5", p5, x5)?;
    Ok([o3, o4, o5])
}

/// Depthwise-separable fusion: k x k DsConv at the merged width, then a 1x1 to `out`.
fn ds_merge(b: &mut GraphBuilder, name: &str, x: NodeId, out: usize, k: usize) -> Result<NodeId> {
    b.scoped(name, |b| {
        let c = b.channels(x);
        let ds = BlockSpec::new(BlockKind::DsConv, c, c).kernel(k).act(ACT);
        let y = b.scoped("ds", |b| emit_block(b, &ds, x))?;
        b.conv("pw", y, out, ConvOpts::cba(1, 1, ACT))
    })
}

fn lcpan(b: &mut GraphBuilder, spec: &FpnSpec, taps: [NodeId; 3]) -> Result<[NodeId; 3]> {
    let (w, k) = (spec.fpn_channels, spec.kernel);
    let mut e = [0; 3];
    for (i, &t) in taps.iter().enumerate() {
        e[i] = b.conv(&format!("equalize{}", i + 3), t, w, ConvOpts::cba(1, 1, ACT))?;
    }
    let [e3, e4, e5] = e;
    let up = b.upsample("upsample0", e5)?;
    let m = merge(b, "merge_p4", spec.merge, up, e4)?;
    let td4 = ds_merge(b, "td_p4", m, w, k)?;
    let up = b.upsample("upsample1", td4)?;
    let m = merge(b, "merge_p3", spec.merge, up, e3)?;
    let o3 = ds_merge(b, "out_p3", m, w, k)?;
    let down = BlockSpec::new(BlockKind::DsConv, w, w).kernel(k).stride(2).act(ACT);
    let d = b.scoped("down3", |b| emit_block(b, &down, o3))?;
    let m = merge(b, "merge_n4", spec.merge, d, td4)?;
    let o4 = ds_merge(b, "out_p4", m, w, k)?;
    let d = b.scoped("down4", |b| emit_block(b, &down, o4))?;
    let m = merge(b, "merge_n5", spec.merge, d, e5)?;
    let o5 = ds_merge(b, "out_p5", m, w, k)?;
    if [o3, o4, o5].iter().any(|&o| b.channels(o) != w) {
        return Err(Error::spec("fpn", "LCPAN outputs not equalized"));
    }
    Ok([o3, o4, o5])
}
