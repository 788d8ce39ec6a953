//! Detector graphs: a topologically ordered list of primitive nodes, each
//! labeled with the detector component it belongs to.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::tensor::{
    add_elementwise, batch_norm_inplace, channel_scale, concat_channels, conv2d, fold_batchnorm,
    global_avg_pool, max_pool, space_to_depth2x, upsample_nearest2x, Activation, BatchNormParams,
    ConvParams, Shape, Tensor,
};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Backbone,
    #[serde(rename = "FPN")]
    Fpn,
    Head,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Backbone, Component::Fpn, Component::Head];

    pub fn label(self) -> &'static str {
        match self {
            Component::Backbone => "Backbone",
            Component::Fpn => "FPN",
            Component::Head => "Head",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// What a conv node looked like before BN folding. Cost accounting uses this
/// so folding never changes the architectural parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvOrigin {
    pub bias: bool,
    pub batch_norm: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNode {
    pub params: ConvParams,
    pub bn: Option<BatchNormParams>,
    pub act: Activation,
    pub origin: ConvOrigin,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Conv(Box<ConvNode>),
    MaxPool { kernel: usize, stride: usize, padding: usize },
    Upsample2x,
    Concat,
    Add { act: Activation },
    SpaceToDepth,
    GlobalAvgPool,
    /// inputs: [x, gate]; gate is (n, c, 1, 1)
    ChannelScale,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv(c) if c.params.is_depthwise() => "dwconv",
            Op::Conv(_) => "conv",
            Op::MaxPool { .. } => "maxpool",
            Op::Upsample2x => "upsample",
            Op::Concat => "concat",
            Op::Add { .. } => "add",
            Op::SpaceToDepth => "space_to_depth",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::ChannelScale => "channel_scale",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub component: Component,
    pub channels: usize,
    /// Cumulative downsampling factor relative to the graph input.
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct Graph {
    pub name: String,
    nodes: Vec<Node>,
    taps: BTreeMap<String, NodeId>,
    outputs: Vec<String>,
    folded: bool,
    // index of the last node reading each value; usize::MAX keeps it alive
    last_use: Vec<usize>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_channels(&self) -> usize {
        self.nodes[0].channels
    }

    pub fn tap(&self, name: &str) -> Option<&Node> {
        self.taps.get(name).map(|&id| &self.nodes[id])
    }

    pub fn tap_id(&self, name: &str) -> Option<NodeId> {
        self.taps.get(name).copied()
    }

    pub fn taps(&self) -> &BTreeMap<String, NodeId> {
        &self.taps
    }

    /// Tap names of the graph outputs, in order.
    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn is_folded(&self) -> bool {
        self.folded
    }

    pub fn output_node(&self) -> NodeId {
        self.outputs
            .first()
            .and_then(|t| self.taps.get(t).copied())
            .unwrap_or(self.nodes.len() - 1)
    }

    /// Replace every conv+BN pair by a single biased conv. Idempotent.
    pub fn fold_batchnorm(&mut self) -> Result<()> {
        for node in &mut self.nodes {
            if let Op::Conv(c) = &mut node.op {
                if let Some(bn) = c.bn.take() {
                    c.params = fold_batchnorm(&c.params, &bn)?;
                }
            }
        }
        self.folded = true;
        Ok(())
    }

    /// Output shape of every node for a given input shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        if input.c != self.input_channels() {
            return Err(Error::shape(
                "graph input",
                format!("{} channels, graph expects {}", input.c, self.input_channels()),
            ));
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let s = match &node.op {
                Op::Input => input,
                Op::Conv(c) => c.params.output_shape(ins[0])?,
                Op::MaxPool { kernel, stride, padding } => {
                    let s = ins[0];
                    let f = |v: usize| crate::tensor::conv_output_size(v, *kernel, *stride, *padding);
                    match (f(s.h), f(s.w)) {
                        (Some(h), Some(w)) => Shape::new(s.n, s.c, h, w),
                        _ => return Err(Error::shape("max_pool", format!("kernel {kernel} on {s}"))),
                    }
                }
                Op::Upsample2x => Shape { h: ins[0].h * 2, w: ins[0].w * 2, ..ins[0] },
                Op::Concat => {
                    let mut s = ins[0];
                    for o in &ins[1..] {
                        if (o.n, o.h, o.w) != (s.n, s.h, s.w) {
                            return Err(Error::shape("concat", format!("{} at {o} vs {s}", node.name)));
                        }
                    }
                    s.c = ins.iter().map(|s| s.c).sum();
                    s
                }
                Op::Add { .. } => {
                    if ins[0] != ins[1] {
                        return Err(Error::shape("add", format!("{}: {} vs {}", node.name, ins[0], ins[1])));
                    }
                    ins[0]
                }
                Op::SpaceToDepth => {
                    let s = ins[0];
                    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
                        return Err(Error::shape("space_to_depth2x", format!("odd input {s}")));
                    }
                    Shape::new(s.n, s.c * 4, s.h / 2, s.w / 2)
                }
                Op::GlobalAvgPool => Shape { h: 1, w: 1, ..ins[0] },
                Op::ChannelScale => ins[0],
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn forward(&self, input: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        self.run(input, None)
    }

    /// Forward pass reporting the wall time of every executed node.
    pub fn forward_timed(
        &self,
        input: &Tensor,
        observer: &mut dyn FnMut(NodeId, Duration),
    ) -> Result<BTreeMap<String, Tensor>> {
        self.run(input, Some(observer))
    }

    fn run(
        &self,
        input: &Tensor,
        mut observer: Option<&mut dyn FnMut(NodeId, Duration)>,
    ) -> Result<BTreeMap<String, Tensor>> {
        if input.shape().c != self.input_channels() {
            return Err(Error::shape(
                "graph input",
                format!("{} channels, graph expects {}", input.shape().c, self.input_channels()),
            ));
        }
        let n = self.nodes.len();
        let last_use = &self.last_use;
        let mut values: Vec<Option<Tensor>> = vec![None; n];
        // timestamps are chained: each node is charged from the end of the
        // previous one, so node times tile the whole loop with no gaps
        let mut start = Instant::now();
        for (j, node) in self.nodes.iter().enumerate() {
            let out = {
                let args: Vec<&Tensor> = node
                    .inputs
                    .iter()
                    .map(|&i| values[i].as_ref().expect("inputs evaluated before use"))
                    .collect();
                eval(node, &args, input)?
            };
            values[j] = Some(out);
            // freeing dead inputs is charged to the node that consumed them
            for &i in &node.inputs {
                if last_use[i] == j {
                    values[i] = None;
                }
            }
            if let Some(obs) = observer.as_mut() {
                let now = Instant::now();
                obs(j, now - start);
                start = now;
            }
        }
        let mut refs = vec![0usize; n];
        for &id in self.taps.values() {
            refs[id] += 1;
        }
        let mut out = BTreeMap::new();
        for (name, &id) in &self.taps {
            // two taps may name the same node; only the last one takes it
            refs[id] -= 1;
            let v = if refs[id] == 0 { values[id].take() } else { values[id].clone() };
            out.insert(name.clone(), v.expect("taps are retained"));
        }
        Ok(out)
    }

    /// Structural fingerprint: op kinds, conv geometry, wiring and components.
    /// Two graphs with equal signatures are isomorphic up to weights and names.
    pub fn signature(&self) -> Vec<String> {
        self.nodes
            .iter()
            .map(|n| {
                let op = match &n.op {
                    Op::Conv(c) => {
                        let p = &c.params;
                        format!(
                            "conv {}->{} k{} s{} g{} bn{} bias{} {:?}",
                            p.in_channels, p.out_channels, p.kernel, p.stride, p.groups,
                            c.origin.batch_norm, c.origin.bias, c.act
                        )
                    }
                    other => format!("{other:?}"),
                };
                format!("{op} <- {:?} [{}]", n.inputs, n.component)
            })
            .collect()
    }
}

fn eval(node: &Node, args: &[&Tensor], input: &Tensor) -> Result<Tensor> {
    Ok(match &node.op {
        Op::Input => input.clone(),
        Op::Conv(c) => {
            let mut y = conv2d(args[0], &c.params)?;
            if let Some(bn) = &c.bn {
                batch_norm_inplace(&mut y, bn)?;
            }
            c.act.apply_inplace(y.data_mut());
            y
        }
        Op::MaxPool { kernel, stride, padding } => max_pool(args[0], *kernel, *stride, *padding)?,
        Op::Upsample2x => upsample_nearest2x(args[0]),
        Op::Concat => concat_channels(args)?,
        Op::Add { act } => {
            let mut y = add_elementwise(args[0], args[1])?;
            act.apply_inplace(y.data_mut());
            y
        }
        Op::SpaceToDepth => space_to_depth2x(args[0])?,
        Op::GlobalAvgPool => global_avg_pool(args[0]),
        Op::ChannelScale => channel_scale(args[0], args[1])?,
    })
}

/// Options for [`GraphBuilder::conv`].
#[derive(Clone, Copy, Debug)]
pub struct ConvOpts {
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub bn: bool,
    pub bias: bool,
    pub act: Activation,
}

impl ConvOpts {
    /// conv -> BN -> act, no bias.
    pub fn cba(kernel: usize, stride: usize, act: Activation) -> Self {
        ConvOpts { kernel, stride, groups: 1, bn: true, bias: false, act }
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// Plain biased conv without BN or activation.
    pub fn biased(kernel: usize) -> Self {
        ConvOpts { kernel, stride: 1, groups: 1, bn: false, bias: true, act: Activation::Identity }
    }
}

/// Incrementally assembles a [`Graph`]. Weights are drawn from a seeded
/// stream so the same description always yields the same parameters.
pub struct GraphBuilder {
    name: String,
    nodes: Vec<Node>,
    taps: BTreeMap<String, NodeId>,
    rng: ChaCha8Rng,
    component: Component,
    scope: Vec<String>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, input_channels: usize, seed: u64) -> Self {
        let input = Node {
            name: "input".into(),
            op: Op::Input,
            inputs: vec![],
            component: Component::Backbone,
            channels: input_channels,
            stride: 1,
        };
        GraphBuilder {
            name: name.into(),
            nodes: vec![input],
            taps: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            component: Component::Backbone,
            scope: Vec::new(),
        }
    }

    pub const INPUT: NodeId = 0;

    pub fn set_component(&mut self, c: Component) {
        self.component = c;
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    pub fn stride(&self, id: NodeId) -> usize {
        self.nodes[id].stride
    }

    /// Run `f` with `name` appended to the node-name scope.
    pub fn scoped<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.scope.push(name.into());
        let r = f(self);
        self.scope.pop();
        r
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts: Vec<&str> = self.scope.iter().map(String::as_str).collect();
        parts.push(leaf);
        parts.join(".")
    }

    fn push(&mut self, leaf: &str, op: Op, inputs: Vec<NodeId>, channels: usize, stride: usize) -> NodeId {
        let name = self.full_name(leaf);
        self.nodes.push(Node { name, op, inputs, component: self.component, channels, stride });
        self.nodes.len() - 1
    }

    pub fn conv(&mut self, leaf: &str, x: NodeId, out: usize, o: ConvOpts) -> Result<NodeId> {
        let cin = self.channels(x);
        let mut params = ConvParams::new(cin, out, o.kernel, o.stride, o.groups)
            .map_err(|e| Error::spec("conv", format!("{}: {e}", self.full_name(leaf))))?;
        if o.bias {
            params = params.with_bias();
        }
        params.randomize(&mut self.rng);
        let bn = o.bn.then(|| {
            let mut bn = BatchNormParams::identity(out);
            bn.randomize(&mut self.rng);
            bn
        });
        let node = ConvNode { params, bn, act: o.act, origin: ConvOrigin { bias: o.bias, batch_norm: o.bn } };
        let stride = self.stride(x) * o.stride;
        Ok(self.push(leaf, Op::Conv(Box::new(node)), vec![x], out, stride))
    }

    pub fn max_pool(&mut self, leaf: &str, x: NodeId, kernel: usize) -> NodeId {
        let (c, s) = (self.channels(x), self.stride(x));
        self.push(leaf, Op::MaxPool { kernel, stride: 1, padding: kernel / 2 }, vec![x], c, s)
    }

    pub fn upsample(&mut self, leaf: &str, x: NodeId) -> Result<NodeId> {
        let (c, s) = (self.channels(x), self.stride(x));
        if s < 2 {
            return Err(Error::spec("upsample", format!("{} is already at full resolution", self.full_name(leaf))));
        }
        Ok(self.push(leaf, Op::Upsample2x, vec![x], c, s / 2))
    }

    pub fn concat(&mut self, leaf: &str, xs: &[NodeId]) -> Result<NodeId> {
        let s = self.stride(xs[0]);
        if xs.iter().any(|&x| self.stride(x) != s) {
            return Err(Error::spec("concat", format!("{}: inputs at different resolutions", self.full_name(leaf))));
        }
        let c = xs.iter().map(|&x| self.channels(x)).sum();
        Ok(self.push(leaf, Op::Concat, xs.to_vec(), c, s))
    }

    pub fn add(&mut self, leaf: &str, a: NodeId, b: NodeId, act: Activation) -> Result<NodeId> {
        let (ca, cb) = (self.channels(a), self.channels(b));
        let (sa, sb) = (self.stride(a), self.stride(b));
        if ca != cb || sa != sb {
            return Err(Error::spec(
                "add",
                format!("{}: {ca} ch @ /{sa} vs {cb} ch @ /{sb}", self.full_name(leaf)),
            ));
        }
        Ok(self.push(leaf, Op::Add { act }, vec![a, b], ca, sa))
    }

    pub fn space_to_depth(&mut self, leaf: &str, x: NodeId) -> NodeId {
        let (c, s) = (self.channels(x), self.stride(x));
        self.push(leaf, Op::SpaceToDepth, vec![x], c * 4, s * 2)
    }

    pub fn global_avg_pool(&mut self, leaf: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        // the pooled map has no meaningful stride; keep the source's for bookkeeping
        let s = self.stride(x);
        self.push(leaf, Op::GlobalAvgPool, vec![x], c, s)
    }

    pub fn channel_scale(&mut self, leaf: &str, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let c = self.channels(x);
        if self.channels(gate) != c {
            return Err(Error::spec("channel_scale", format!("{}: gate width mismatch", self.full_name(leaf))));
        }
        let s = self.stride(x);
        Ok(self.push(leaf, Op::ChannelScale, vec![x, gate], c, s))
    }

    pub fn set_tap(&mut self, name: impl Into<String>, id: NodeId) {
        self.taps.insert(name.into(), id);
    }

    pub fn finish(mut self, outputs: &[&str]) -> Result<Graph> {
        for o in outputs {
            if !self.taps.contains_key(*o) {
                return Err(Error::spec("graph", format!("output '{o}' is not a tap")));
            }
        }
        if outputs.is_empty() {
            let last = self.nodes.len() - 1;
            self.taps.insert("output".into(), last);
        }
        let outputs = if outputs.is_empty() { vec!["output".to_string()] } else { outputs.iter().map(|s| s.to_string()).collect() };
        let mut last_use = vec![0usize; self.nodes.len()];
        for (j, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = j;
            }
        }
        for &id in self.taps.values() {
            last_use[id] = usize::MAX;
        }
        Ok(Graph { name: self.name, nodes: self.nodes, taps: self.taps, outputs, folded: false, last_use })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Graph {
        let mut b = GraphBuilder::new("tiny", 3, 0);
        let c = b.conv("c1", GraphBuilder::INPUT, 8, ConvOpts::cba(3, 2, Activation::Silu)).unwrap();
        let d = b.conv("c2", c, 8, ConvOpts::cba(3, 1, Activation::Silu).groups(8)).unwrap();
        let a = b.add("sum", c, d, Activation::Identity).unwrap();
        b.set_tap("out", a);
        b.finish(&["out"]).unwrap()
    }

    #[test]
    fn shapes_follow_strides() {
        let g = tiny();
        let s = g.infer_shapes(Shape::new(1, 3, 32, 32)).unwrap();
        assert_eq!(*s.last().unwrap(), Shape::new(1, 8, 16, 16));
        assert_eq!(g.tap("out").unwrap().stride, 2);
    }

    #[test]
    fn folding_preserves_output() {
        let mut g = tiny();
        let x = Tensor::seeded(Shape::new(1, 3, 16, 16), 9);
        let before = g.forward(&x).unwrap();
        g.fold_batchnorm().unwrap();
        let after = g.forward(&x).unwrap();
        assert!(before["out"].max_abs_diff(&after["out"]).unwrap() < 1e-4);
    }

    #[test]
    fn add_rejects_mismatch() {
        let mut b = GraphBuilder::new("bad", 3, 0);
        let c = b.conv("c1", GraphBuilder::INPUT, 8, ConvOpts::cba(3, 2, Activation::Silu)).unwrap();
        assert!(b.add("sum", GraphBuilder::INPUT, c, Activation::Identity).is_err());
    }

    #[test]
    fn timed_forward_visits_every_node() {
        let g = tiny();
        let mut seen = vec![];
        g.forward_timed(&Tensor::seeded(Shape::new(1, 3, 8, 8), 1), &mut |id, _| seen.push(id)).unwrap();
        assert_eq!(seen, (0..g.nodes().len()).collect::<Vec<_>>());
    }
}
