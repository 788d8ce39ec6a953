//! Parameter and FLOP accounting.
//!
//! Params: conv weights kh*kw*(in/groups)*out, plus out for a bias, plus
//! 2*out (gamma, beta) for batch norm. Running statistics are not counted.
//!
//! FLOPs: conv nodes report 2 * (MACs + bias adds + 2 BN ops per output
//! element), the convention under which the published YOLOX-tiny totals
//! come out at 6.45 G for 416x416. Pools, upsampling and elementwise nodes
//! cost one op per output element; concat, space-to-depth and fused
//! activations are free.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::bench::LatencyReport;
use crate::blocks::BlockCost;
use crate::error::{Error, Result};
use crate::graph::{Component, Graph, Node, Op};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountingRule {
    /// Count the pre-fold structure: BN as 2*c params even after folding,
    /// folded biases not counted twice. This is the table convention.
    #[default]
    Architecture,
    /// Count what is actually bound: a folded conv has weights plus a bias.
    Deployed,
}

pub fn node_cost(node: &Node, inputs: &[Shape], out: Shape, rule: CountingRule) -> BlockCost {
    let elems = out.numel() as u64;
    match &node.op {
        Op::Conv(c) => {
            let p = &c.params;
            let (bias, bn) = match rule {
                CountingRule::Architecture => (c.origin.bias, c.origin.batch_norm),
                CountingRule::Deployed => (p.bias.is_some(), c.bn.is_some()),
            };
            let oc = p.out_channels as u64;
            let params = p.weight_len() as u64 + if bias { oc } else { 0 } + if bn { 2 * oc } else { 0 };
            let macs = p.macs(out);
            let aux = if bias { elems } else { 0 } + if bn { 2 * elems } else { 0 };
            BlockCost { params, macs, flops: 2 * (macs + aux) }
        }
        Op::MaxPool { .. } | Op::Upsample2x | Op::Add { .. } | Op::ChannelScale => {
            BlockCost { params: 0, macs: 0, flops: elems }
        }
        Op::GlobalAvgPool => BlockCost { params: 0, macs: 0, flops: inputs[0].numel() as u64 },
        Op::Input | Op::Concat | Op::SpaceToDepth => BlockCost::default(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub name: String,
    pub component: Component,
    pub kind: String,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub params_m: f64,
    pub gflops: f64,
}

impl Rollup {
    fn from_cost(c: BlockCost) -> Self {
        Rollup {
            params: c.params,
            macs: c.macs,
            flops: c.flops,
            params_m: c.params as f64 / 1e6,
            gflops: c.flops as f64 / 1e9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub model: String,
    /// (h, w); absent for a params-only report.
    pub input_size: Option<(usize, usize)>,
    pub rule: CountingRule,
    pub rows: Vec<NodeRow>,
    pub components: BTreeMap<Component, Rollup>,
    pub total: Rollup,
    /// Read-only metadata copied from published results; never computed here.
    #[serde(default)]
    pub map: Option<f64>,
}

impl AnalysisReport {
    pub fn component(&self, c: Component) -> Rollup {
        self.components.get(&c).copied().unwrap_or_default()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One-line CSV of the rollups: component params and flops plus totals.
    pub fn write_rollup_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "component", "params", "params_m", "macs", "gflops"])?;
        let mut rows: Vec<(String, Rollup)> =
            Component::ALL.iter().map(|c| (c.label().to_string(), self.component(*c))).collect();
        rows.push(("Total".into(), self.total));
        for (name, r) in rows {
            w.write_record([
                self.model.clone(),
                name,
                r.params.to_string(),
                format!("{:.6}", r.params_m),
                r.macs.to_string(),
                format!("{:.6}", r.gflops),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn build_report(graph: &Graph, rows: Vec<NodeRow>, input_size: Option<(usize, usize)>, rule: CountingRule) -> AnalysisReport {
    let mut comps: BTreeMap<Component, BlockCost> = BTreeMap::new();
    let mut total = BlockCost::default();
    for r in &rows {
        let c = BlockCost { params: r.params, macs: r.macs, flops: r.flops };
        let e = comps.entry(r.component).or_default();
        *e = *e + c;
        total = total + c;
    }
    AnalysisReport {
        model: graph.name.clone(),
        input_size,
        rule,
        rows,
        components: comps.into_iter().map(|(k, v)| (k, Rollup::from_cost(v))).collect(),
        total: Rollup::from_cost(total),
        map: None,
    }
}

pub fn count_params(graph: &Graph) -> AnalysisReport {
    count_params_with(graph, CountingRule::Architecture)
}

pub fn count_params_with(graph: &Graph, rule: CountingRule) -> AnalysisReport {
    // params never depend on spatial size; a 1x1 stand-in keeps shape logic simple
    let dummy = Shape::new(1, 1, 1, 1);
    let rows = graph
        .nodes()
        .iter()
        .map(|n| {
            let c = node_cost(n, &[dummy], dummy, rule);
            NodeRow { name: n.name.clone(), component: n.component, kind: n.op.kind().into(), params: c.params, macs: 0, flops: 0 }
        })
        .collect();
    build_report(graph, rows, None, rule)
}

/// Full report (params and flops) at input resolution (h, w).
pub fn count_flops(graph: &Graph, input_size: (usize, usize)) -> Result<AnalysisReport> {
    count_flops_with(graph, input_size, CountingRule::Architecture)
}

pub fn count_flops_with(graph: &Graph, (h, w): (usize, usize), rule: CountingRule) -> Result<AnalysisReport> {
    let divisor = graph.nodes().iter().map(|n| n.stride).max().unwrap_or(1);
    if h == 0 || w == 0 || h % divisor != 0 || w % divisor != 0 {
        return Err(Error::InputSize { h, w, divisor });
    }
    let shapes = graph.infer_shapes(Shape::new(1, graph.input_channels(), h, w))?;
    let rows = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let ins: Vec<Shape> = n.inputs.iter().map(|&j| shapes[j]).collect();
            let c = node_cost(n, &ins, shapes[i], rule);
            NodeRow {
                name: n.name.clone(),
                component: n.component,
                kind: n.op.kind().into(),
                params: c.params,
                macs: c.macs,
                flops: c.flops,
            }
        })
        .collect();
    Ok(build_report(graph, rows, Some((h, w)), rule))
}

/// Percent shares of the three components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shares {
    pub backbone: f64,
    pub fpn: f64,
    pub head: f64,
}

impl Shares {
    fn from_values(v: [f64; 3]) -> Self {
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return Shares::default();
        }
        Shares { backbone: 100.0 * v[0] / sum, fpn: 100.0 * v[1] / sum, head: 100.0 * v[2] / sum }
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Backbone => self.backbone,
            Component::Fpn => self.fpn,
            Component::Head => self.head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub model: String,
    pub latency: Shares,
    pub flops: Shares,
    pub params: Shares,
}

/// Latency, flops and params shares per component. Every timed node must be
/// present in the analysis report.
pub fn component_breakdown(report: &AnalysisReport, latency: &LatencyReport) -> Result<Breakdown> {
    let by_name: BTreeMap<&str, Component> = report.rows.iter().map(|r| (r.name.as_str(), r.component)).collect();
    let mut lat = [0.0f64; 3];
    for node in &latency.nodes {
        let c = by_name.get(node.name.as_str()).copied().ok_or_else(|| {
            Error::spec("breakdown", format!("timed node '{}' has no component label in the report", node.name))
        })?;
        if c != node.component {
            return Err(Error::spec("breakdown", format!("node '{}' labeled {} vs {}", node.name, node.component, c)));
        }
        lat[c as usize] += node.mean_ms;
    }
    let f = |sel: fn(&Rollup) -> f64| Component::ALL.map(|c| sel(&report.component(c)));
    Ok(Breakdown {
        model: report.model.clone(),
        latency: Shares::from_values(lat),
        flops: Shares::from_values(f(|r| r.flops as f64)),
        params: Shares::from_values(f(|r| r.params as f64)),
    })
}
