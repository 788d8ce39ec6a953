//! The block zoo. Each block is emitted as primitive graph nodes, so one
//! description drives forward execution and cost accounting alike.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConvOpts, Graph, GraphBuilder, NodeId};
use crate::profiler::{self, CountingRule};
use crate::tensor::{Activation, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    ConvBnAct,
    DarknetBottleneck,
    CspLayer,
    MbConv,
    FusedMbConv,
    Sandglass,
    RegNetX,
    DsConv,
    BsConv,
    Focus,
    SppBottleneck,
    SqueezeExcite,
}

/// How expansion-style blocks size their hidden width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpandConvention {
    /// hidden = round(t * out); every conv is kept at t = 1.
    /// Sandglass uses round(r * out).
    #[default]
    OutputScaled,
    /// hidden = round(t * in); MbConv drops its expand conv at t = 1 and
    /// FusedMbConv collapses to a single k x k ConvBnAct. Sandglass uses round(r * in).
    MobileNet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Spatial kernel of the main conv (depthwise or dense).
    pub kernel: usize,
    pub expand_ratio: f64,
    pub reduce_ratio: f64,
    /// Inner repeats (CspLayer).
    pub depth: usize,
    /// Channels per group in the RegNetX middle conv; 1 makes it depthwise.
    pub group_width: usize,
    pub activation: Activation,
    pub use_residual: bool,
    /// Squeeze-excite inside DsConv/BsConv.
    pub use_se: bool,
    pub convention: ExpandConvention,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Self {
        BlockSpec {
            kind,
            in_channels,
            out_channels,
            stride: 1,
            kernel: 3,
            expand_ratio: 1.0,
            reduce_ratio: 0.5,
            depth: 1,
            group_width: 1,
            activation: Activation::Silu,
            use_residual: false,
            use_se: false,
            convention: ExpandConvention::OutputScaled,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }
    pub fn kernel(mut self, k: usize) -> Self {
        self.kernel = k;
        self
    }
    pub fn expand(mut self, t: f64) -> Self {
        self.expand_ratio = t;
        self
    }
    pub fn reduce(mut self, r: f64) -> Self {
        self.reduce_ratio = r;
        self
    }
    pub fn depth(mut self, n: usize) -> Self {
        self.depth = n;
        self
    }
    pub fn group_width(mut self, g: usize) -> Self {
        self.group_width = g;
        self
    }
    pub fn act(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }
    pub fn residual(mut self, r: bool) -> Self {
        self.use_residual = r;
        self
    }
    pub fn se(mut self, se: bool) -> Self {
        self.use_se = se;
        self
    }
    pub fn convention(mut self, c: ExpandConvention) -> Self {
        self.convention = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::spec("block", format!("{:?}: {d}", self.kind)));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("zero channels".into());
        }
        if !matches!(self.stride, 1 | 2) {
            return bad(format!("stride {} not in {{1, 2}}", self.stride));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.expand_ratio.is_nan() || self.expand_ratio <= 0.0 || self.reduce_ratio.is_nan() || self.reduce_ratio <= 0.0 {
            return bad("expand and reduce ratios must be positive".into());
        }
        if self.use_residual && (self.stride != 1 || self.in_channels != self.out_channels) {
            return bad(format!(
                "residual needs stride 1 and equal widths, got {}->{} stride {}",
                self.in_channels, self.out_channels, self.stride
            ));
        }
        match self.kind {
            BlockKind::CspLayer | BlockKind::DarknetBottleneck | BlockKind::SppBottleneck | BlockKind::Focus
                if self.stride != 1 =>
            {
                bad("block is stride 1 only".into())
            }
            BlockKind::CspLayer if self.depth == 0 => bad("depth must be at least 1".into()),
            BlockKind::SqueezeExcite if self.in_channels != self.out_channels || self.stride != 1 => {
                bad("squeeze-excite preserves shape".into())
            }
            BlockKind::RegNetX if self.group_width == 0 => bad("group width must be positive".into()),
            _ => Ok(()),
        }
    }

    fn scaled(&self, ratio: f64) -> usize {
        let base = match self.convention {
            ExpandConvention::OutputScaled => self.out_channels,
            ExpandConvention::MobileNet => self.in_channels,
        };
        ((base as f64 * ratio).round() as usize).max(1)
    }
}

/// Parameter and operation counts. `macs` are conv multiply-accumulates;
/// `flops` follow the reporting convention documented in [`crate::profiler`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCost {
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
}

impl std::ops::Add for BlockCost {
    type Output = BlockCost;
    fn add(self, o: BlockCost) -> BlockCost {
        BlockCost { params: self.params + o.params, macs: self.macs + o.macs, flops: self.flops + o.flops }
    }
}

/// A standalone block: its own small graph with one input and one output.
#[derive(Clone, Debug)]
pub struct Block {
    pub spec: BlockSpec,
    graph: Graph,
}

pub fn build_block(spec: &BlockSpec) -> Result<Block> {
    build_block_seeded(spec, 0)
}

pub fn build_block_seeded(spec: &BlockSpec, seed: u64) -> Result<Block> {
    let mut b = GraphBuilder::new(format!("{:?}", spec.kind), spec.in_channels, seed);
    let out = emit_block(&mut b, spec, GraphBuilder::INPUT)?;
    b.set_tap("output", out);
    Ok(Block { spec: spec.clone(), graph: b.finish(&["output"])? })
}

impl Block {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.graph.forward(x)?.remove("output").expect("output tap"))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        Ok(*self.graph.infer_shapes(input)?.last().expect("non-empty graph"))
    }

    /// Cost at a given input resolution (params do not depend on it).
    pub fn cost(&self, h: usize, w: usize) -> Result<BlockCost> {
        let shapes = self.graph.infer_shapes(Shape::new(1, self.spec.in_channels, h, w))?;
        let mut total = BlockCost::default();
        for (i, node) in self.graph.nodes().iter().enumerate() {
            let ins: Vec<Shape> = node.inputs.iter().map(|&j| shapes[j]).collect();
            total = total + profiler::node_cost(node, &ins, shapes[i], CountingRule::Architecture);
        }
        Ok(total)
    }
}

/// Append the nodes for `spec` after node `x`; returns the block output.
pub fn emit_block(b: &mut GraphBuilder, spec: &BlockSpec, x: NodeId) -> Result<NodeId> {
    spec.validate()?;
    if b.channels(x) != spec.in_channels {
        return Err(Error::spec(
            "block",
            format!("{:?} expects {} input channels, got {}", spec.kind, spec.in_channels, b.channels(x)),
        ));
    }
    let (ci, co, s, k, act) = (spec.in_channels, spec.out_channels, spec.stride, spec.kernel, spec.activation);
    let cba = |k, s| ConvOpts::cba(k, s, act);
    let lin = |k, s| ConvOpts::cba(k, s, Activation::Identity);
    let mobilenet = spec.convention == ExpandConvention::MobileNet;
    let residual = |b: &mut GraphBuilder, y: NodeId| -> Result<NodeId> {
        if spec.use_residual {
            b.add("add", x, y, Activation::Identity)
        } else {
            Ok(y)
        }
    };

    match spec.kind {
        BlockKind::ConvBnAct => b.conv("conv", x, co, cba(k, s)),
        BlockKind::DarknetBottleneck => {
            let h = ((co as f64 * spec.expand_ratio) as usize).max(1);
            let y = b.conv("conv1", x, h, cba(1, 1))?;
            let y = b.conv("conv2", y, co, cba(k, 1))?;
            residual(b, y)
        }
        BlockKind::CspLayer => {
            let h = (co / 2).max(1);
            let mut main = b.conv("conv1", x, h, cba(1, 1))?;
            let side = b.conv("conv2", x, h, cba(1, 1))?;
            for i in 0..spec.depth {
                // the CSP residual flag applies to its inner bottlenecks
                let inner = BlockSpec::new(BlockKind::DarknetBottleneck, h, h).act(act).residual(spec.use_residual);
                main = b.scoped(format!("m{i}"), |b| emit_block(b, &inner, main))?;
            }
            let cat = b.concat("cat", &[main, side])?;
            b.conv("conv3", cat, co, cba(1, 1))
        }
        BlockKind::MbConv => {
            let h = spec.scaled(spec.expand_ratio);
            let mut y = x;
            if !(mobilenet && h == ci) {
                y = b.conv("expand", y, h, cba(1, 1))?;
            }
            let y = b.conv("dw", y, h, cba(k, s).groups(h))?;
            let y = b.conv("project", y, co, lin(1, 1))?;
            residual(b, y)
        }
        BlockKind::FusedMbConv => {
            let h = spec.scaled(spec.expand_ratio);
            let y = if mobilenet && h == ci {
                b.conv("conv", x, co, cba(k, s))?
            } else {
                let y = b.conv("expand", x, h, cba(k, s))?;
                b.conv("project", y, co, lin(1, 1))?
            };
            residual(b, y)
        }
        BlockKind::Sandglass => {
            let h = spec.scaled(spec.reduce_ratio);
            let y = b.conv("dw1", x, ci, cba(k, 1).groups(ci))?;
            let y = b.conv("reduce", y, h, lin(1, 1))?;
            let y = b.conv("expand", y, co, cba(1, 1))?;
            let y = b.conv("dw2", y, co, lin(k, s).groups(co))?;
            residual(b, y)
        }
        BlockKind::RegNetX => {
            let h = spec.scaled(spec.expand_ratio);
            if !h.is_multiple_of(spec.group_width) {
                return Err(Error::spec("block", format!("RegNetX width {h} not divisible by group width {}", spec.group_width)));
            }
            let y = b.conv("a", x, h, cba(1, 1))?;
            let y = b.conv("b", y, h, cba(k, s).groups(h / spec.group_width))?;
            let y = b.conv("c", y, co, lin(1, 1))?;
            if s != 1 || ci != co {
                let proj = b.conv("proj", x, co, lin(1, s))?;
                b.add("add", proj, y, act)
            } else if spec.use_residual {
                b.add("add", x, y, act)
            } else {
                Ok(y)
            }
        }
        BlockKind::DsConv => {
            let mut y = b.conv("dw", x, ci, cba(k, s).groups(ci))?;
            if spec.use_se {
                y = b.scoped("se", |b| squeeze_excite(b, y))?;
            }
            let y = b.conv("pw", y, co, cba(1, 1))?;
            residual(b, y)
        }
        BlockKind::BsConv => {
            let y = b.conv("pw", x, co, lin(1, 1))?;
            let mut y = b.conv("dw", y, co, cba(k, s).groups(co))?;
            if spec.use_se {
                y = b.scoped("se", |b| squeeze_excite(b, y))?;
            }
            residual(b, y)
        }
        BlockKind::Focus => {
            let y = b.space_to_depth("space_to_depth", x);
            b.conv("conv", y, co, cba(k, 1))
        }
        BlockKind::SppBottleneck => {
            let h = (ci / 2).max(1);
            let y = b.conv("conv1", x, h, cba(1, 1))?;
            let mut branches = vec![y];
            for pk in [5, 9, 13] {
                branches.push(b.max_pool(&format!("pool{pk}"), y, pk));
            }
            let cat = b.concat("cat", &branches)?;
            b.conv("conv2", cat, co, cba(1, 1))
        }
        BlockKind::SqueezeExcite => squeeze_excite(b, x),
    }
}

const SE_REDUCTION: usize = 4;

fn squeeze_excite(b: &mut GraphBuilder, x: NodeId) -> Result<NodeId> {
    let c = b.channels(x);
    let pooled = b.global_avg_pool("pool", x);
    let mut reduce = ConvOpts::biased(1);
    reduce.act = Activation::Relu;
    let y = b.conv("reduce", pooled, (c / SE_REDUCTION).max(1), reduce)?;
    let mut restore = ConvOpts::biased(1);
    restore.act = Activation::HardSigmoid;
    let gate = b.conv("restore", y, c, restore)?;
    b.channel_scale("scale", x, gate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(spec: BlockSpec) -> u64 {
        build_block(&spec).unwrap().cost(8, 8).unwrap().params
    }

    #[test]
    fn conv_bn_act_formula() {
        let spec = BlockSpec::new(BlockKind::ConvBnAct, 3, 16).stride(2);
        assert_eq!(params(spec), 3 * 3 * 3 * 16 + 2 * 16);
    }

    #[test]
    fn mobilenet_convention_unit_expand() {
        let spec = BlockSpec::new(BlockKind::MbConv, 64, 64).residual(true).convention(ExpandConvention::MobileNet);
        assert_eq!(params(spec), 3 * 3 * 64 + 64 * 64 + 2 * (64 + 64));
        let fused = build_block(&BlockSpec::new(BlockKind::FusedMbConv, 32, 32).convention(ExpandConvention::MobileNet)).unwrap();
        assert_eq!(fused.graph().nodes().len(), 2);
    }

    #[test]
    fn output_scaled_keeps_expand() {
        let spec = BlockSpec::new(BlockKind::MbConv, 64, 64).residual(true);
        assert_eq!(params(spec), 64 * 64 + 128 + 9 * 64 + 128 + 64 * 64 + 128);
    }

    #[test]
    fn residual_needs_identity_dims() {
        let spec = BlockSpec::new(BlockKind::MbConv, 32, 64).residual(true);
        assert!(build_block(&spec).is_err());
        let spec = BlockSpec::new(BlockKind::MbConv, 32, 32).stride(2).residual(true);
        assert!(build_block(&spec).is_err());
    }

    #[test]
    fn csp_preserves_shape() {
        let blk = build_block(&BlockSpec::new(BlockKind::CspLayer, 96, 96).residual(true)).unwrap();
        let s = Shape::new(1, 96, 13, 13);
        assert_eq!(blk.output_shape(s).unwrap(), s);
        let y = blk.forward(&Tensor::seeded(s, 3)).unwrap();
        assert_eq!(y.shape(), s);
    }

    #[test]
    fn regnet_projection_on_stride() {
        let blk = build_block(&BlockSpec::new(BlockKind::RegNetX, 24, 48).stride(2)).unwrap();
        assert!(blk.graph().nodes().iter().any(|n| n.name == "proj"));
        let y = blk.forward(&Tensor::seeded(Shape::new(1, 24, 16, 16), 0)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 48, 8, 8));
    }

    #[test]
    fn se_params() {
        let c = 64;
        let spec = BlockSpec::new(BlockKind::SqueezeExcite, c, c);
        assert_eq!(params(spec), (c * c / 4 + c / 4 + c / 4 * c + c) as u64);
    }

    #[test]
    fn spp_and_focus_shapes() {
        let spp = build_block(&BlockSpec::new(BlockKind::SppBottleneck, 64, 64)).unwrap();
        assert_eq!(spp.output_shape(Shape::new(1, 64, 13, 13)).unwrap(), Shape::new(1, 64, 13, 13));
        let focus = build_block(&BlockSpec::new(BlockKind::Focus, 3, 24)).unwrap();
        assert_eq!(focus.output_shape(Shape::new(1, 3, 416, 416)).unwrap(), Shape::new(1, 24, 208, 208));
        assert_eq!(focus.cost(416, 416).unwrap().params, 12 * 24 * 9 + 48);
    }

    #[test]
    fn every_kind_forwards() {
        use BlockKind::*;
        for kind in [ConvBnAct, DarknetBottleneck, CspLayer, MbConv, FusedMbConv, Sandglass, RegNetX, DsConv, BsConv, Focus, SppBottleneck, SqueezeExcite] {
            let spec = BlockSpec::new(kind, 16, 16).se(true);
            let blk = build_block(&spec).unwrap();
            let y = blk.forward(&Tensor::seeded(Shape::new(1, 16, 8, 8), 1)).unwrap();
            assert_eq!(y.shape(), blk.output_shape(Shape::new(1, 16, 8, 8)).unwrap(), "{kind:?}");
            let cost = blk.cost(8, 8).unwrap();
            assert!(cost.params > 0 && cost.flops > 0 && cost.macs > 0, "{kind:?}");
        }
    }
}
