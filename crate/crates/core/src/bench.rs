//! Single-threaded wall-clock latency measurement with per-component attribution.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::graph::{Component, Graph, GraphBuilder};
use crate::net::{compile, ModelSpec};
use crate::profiler::{count_flops, Shares};
use crate::reference::reference_tables;
use crate::tensor::{Shape, Tensor};

/// Coefficient of variation above which a run is flagged unstable.
pub const UNSTABLE_CV: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup_iters: usize,
    pub measure_iters: usize,
    /// Fixed at 1.
    pub batch: usize,
    /// Fixed at 1.
    pub threads: usize,
    pub input_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { warmup_iters: 50, measure_iters: 300, batch: 1, threads: 1, input_size: 416, seed: 0 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch != 1 || self.threads != 1 {
            return Err(Error::Bench(format!(
                "batch and threads are fixed at 1 (got batch {}, threads {})",
                self.batch, self.threads
            )));
        }
        if self.measure_iters == 0 {
            return Err(Error::Bench("measure_iters must be at least 1".into()));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::InputSize { h: self.input_size, w: self.input_size, divisor: 32 });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
    pub cv: f64,
}

impl Stats {
    pub fn from_samples(xs: &[f64]) -> Stats {
        if xs.is_empty() {
            return Stats::default();
        }
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Stats {
            median,
            mean,
            p95: s[rank - 1],
            min: s[0],
            max: s[n - 1],
            std,
            cv: if mean > 0.0 { std / mean } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub logical_cores: usize,
    pub os: String,
    pub arch: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Environment {
    pub fn capture() -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Environment {
            cpu_model,
            logical_cores: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTiming {
    pub name: String,
    pub component: Component,
    pub kind: String,
    pub mean_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Cost of one pre/post timestamp pair.
    pub timer_pair_ns: f64,
    /// Mean wall time per node on a graph of no-op sized nodes.
    pub empty_node_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model: String,
    pub config: BenchConfig,
    pub environment: Environment,
    pub calibration: Calibration,
    /// Wall time of each measured forward pass.
    pub iterations_ms: Vec<f64>,
    /// Per-iteration sum of node times, per component.
    pub component_iterations_ms: BTreeMap<Component, Vec<f64>>,
    pub total: Stats,
    pub components: BTreeMap<Component, Stats>,
    /// Shares of the summed node time.
    pub component_share_pct: Shares,
    pub nodes: Vec<NodeTiming>,
    /// Largest |sum of components - wall total| / wall total over all iterations.
    pub additivity_error: f64,
    pub unstable: bool,
}

impl LatencyReport {
    pub fn median_ms(&self) -> f64 {
        self.total.median
    }

    pub fn component_median_ms(&self, c: Component) -> f64 {
        self.components.get(&c).map_or(0.0, |s| s.median)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn calibrate() -> Result<Calibration> {
    let reps = 20_000;
    let t = Instant::now();
    let mut sink = 0u128;
    for _ in 0..reps {
        let s = Instant::now();
        sink = sink.wrapping_add(s.elapsed().as_nanos());
    }
    std::hint::black_box(sink);
    let timer_pair_ns = t.elapsed().as_nanos() as f64 / reps as f64;

    let mut b = GraphBuilder::new("calibration", 1, 0);
    let mut x = GraphBuilder::INPUT;
    for i in 0..64 {
        x = b.max_pool(&format!("noop{i}"), x, 1);
    }
    b.set_tap("out", x);
    let g = b.finish(&["out"])?;
    let input = Tensor::zeros(Shape::new(1, 1, 1, 1));
    let rounds = 200;
    let t = Instant::now();
    for _ in 0..rounds {
        g.forward_timed(&input, &mut |_, _| {})?;
    }
    let empty_node_ns = t.elapsed().as_nanos() as f64 / (rounds * g.nodes().len()) as f64;
    Ok(Calibration { timer_pair_ns, empty_node_ns })
}

/// Time `graph` under `cfg`. Warmup passes are discarded.
pub fn run_bench(graph: &Graph, cfg: &BenchConfig) -> Result<LatencyReport> {
    cfg.validate()?;
    let calibration = calibrate()?;
    let input = Tensor::seeded(Shape::new(cfg.batch, graph.input_channels(), cfg.input_size, cfg.input_size), cfg.seed);
    for _ in 0..cfg.warmup_iters {
        graph.forward(&input)?;
    }
    let nodes = graph.nodes();
    let mut node_ns = vec![0u128; nodes.len()];
    let mut iterations_ms = Vec::with_capacity(cfg.measure_iters);
    let mut comp_iters: BTreeMap<Component, Vec<f64>> =
        Component::ALL.iter().map(|c| (*c, Vec::with_capacity(cfg.measure_iters))).collect();
    let mut additivity_error = 0.0f64;
    for _ in 0..cfg.measure_iters {
        let mut comp_ns = [0u128; 3];
        let t0 = Instant::now();
        graph.forward_timed(&input, &mut |id, d| {
            let ns = d.as_nanos();
            node_ns[id] += ns;
            comp_ns[nodes[id].component as usize] += ns;
        })?;
        let total_ms = t0.elapsed().as_secs_f64() * 1e3;
        iterations_ms.push(total_ms);
        let mut sum = 0.0;
        for c in Component::ALL {
            let ms = comp_ns[c as usize] as f64 / 1e6;
            sum += ms;
            comp_iters.get_mut(&c).expect("all components present").push(ms);
        }
        additivity_error = additivity_error.max((total_ms - sum).abs() / total_ms);
    }
    let total = Stats::from_samples(&iterations_ms);
    let components: BTreeMap<Component, Stats> =
        comp_iters.iter().map(|(c, v)| (*c, Stats::from_samples(v))).collect();
    let means = Component::ALL.map(|c| components[&c].mean);
    let sum: f64 = means.iter().sum();
    let component_share_pct = if sum > 0.0 {
        Shares { backbone: 100.0 * means[0] / sum, fpn: 100.0 * means[1] / sum, head: 100.0 * means[2] / sum }
    } else {
        Shares::default()
    };
    let iters = cfg.measure_iters as f64;
    let nodes = nodes
        .iter()
        .zip(&node_ns)
        .map(|(n, &ns)| NodeTiming {
            name: n.name.clone(),
            component: n.component,
            kind: n.op.kind().into(),
            mean_ms: ns as f64 / 1e6 / iters,
        })
        .collect();
    Ok(LatencyReport {
        model: graph.name.clone(),
        config: cfg.clone(),
        environment: Environment::capture(),
        calibration,
        unstable: total.cv > UNSTABLE_CV,
        iterations_ms,
        component_iterations_ms: comp_iters,
        total,
        components,
        component_share_pct,
        nodes,
        additivity_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub params_m: Option<f64>,
    pub gflops: Option<f64>,
    pub latency_ms: Option<f64>,
    /// Reported mAP from the reference tables, if this model appears there.
    pub map: Option<f64>,
    pub backbone_ms: Option<f64>,
    pub fpn_ms: Option<f64>,
    pub head_ms: Option<f64>,
    pub unstable: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    /// Sorted by name.
    pub rows: Vec<SweepRow>,
    pub reports: Vec<LatencyReport>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Benchmark every model in turn. A model that fails to compile or run is
/// recorded with its error and the sweep moves on.
pub fn sweep(models: &[ModelSpec], cfg: &BenchConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut result = SweepResult::default();
    for m in models {
        let mut row = SweepRow {
            name: m.name.clone(),
            params_m: None,
            gflops: None,
            latency_ms: None,
            map: reference_tables().map_for(&m.name),
            backbone_ms: None,
            fpn_ms: None,
            head_ms: None,
            unstable: false,
            error: None,
        };
        let outcome = compile(m).and_then(|g| {
            let analysis = count_flops(&g, (cfg.input_size, cfg.input_size))?;
            let report = run_bench(&g, cfg)?;
            Ok((analysis, report))
        });
        match outcome {
            Ok((analysis, report)) => {
                row.params_m = Some(analysis.total.params_m);
                row.gflops = Some(analysis.total.gflops);
                row.latency_ms = Some(report.median_ms());
                row.backbone_ms = Some(report.component_median_ms(Component::Backbone));
                row.fpn_ms = Some(report.component_median_ms(Component::Fpn));
                row.head_ms = Some(report.component_median_ms(Component::Head));
                row.unstable = report.unstable;
                result.reports.push(report);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        result.rows.push(row);
    }
    result.rows.sort_by(|a, b| a.name.cmp(&b.name));
    result.reports.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(result)
}

pub const SWEEP_HEADER: [&str; 10] =
    ["name", "params_m", "gflops", "latency_ms", "map", "backbone_ms", "fpn_ms", "head_ms", "unstable", "error"];

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let f = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            f(r.params_m, 4),
            f(r.gflops, 4),
            f(r.latency_ms, 3),
            f(r.map, 1),
            f(r.backbone_ms, 3),
            f(r.fpn_ms, 3),
            f(r.head_ms, 3),
            r.unstable.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub label: String,
    pub latency_ms: f64,
    pub map: Option<f64>,
    pub params_m: f64,
    pub gflops: f64,
}

pub fn scatter_points(rows: &[SweepRow]) -> Vec<ScatterPoint> {
    rows.iter()
        .filter_map(|r| {
            Some(ScatterPoint {
                label: r.name.clone(),
                latency_ms: r.latency_ms?,
                map: r.map,
                params_m: r.params_m?,
                gflops: r.gflops?,
            })
        })
        .collect()
}

/// Write `csv_path`, a `scatter.json` beside it and one `bench_<name>.json` per model.
pub fn write_sweep_outputs(result: &SweepResult, csv_path: &Path) -> Result<Vec<PathBuf>> {
    let dir = csv_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut written = vec![csv_path.to_path_buf()];
    write_sweep_csv(&result.rows, fs::File::create(csv_path)?)?;
    let scatter = dir.join("scatter.json");
    fs::write(&scatter, serde_json::to_string_pretty(&scatter_points(&result.rows))?)?;
    written.push(scatter);
    for rep in &result.reports {
        let p = dir.join(format!("bench_{}.json", rep.model));
        fs::write(&p, rep.to_json()?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_basic() {
        let s = Stats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.p95, 4.0);
        assert!((s.cv - 1.118034 / 2.5).abs() < 1e-6);
    }

    #[test]
    fn config_guards() {
        let mut c = BenchConfig::default();
        c.validate().unwrap();
        c.threads = 2;
        assert!(c.validate().is_err());
        let c = BenchConfig { input_size: 100, ..BenchConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_sweep_has_header_only() {
        let cfg = BenchConfig { warmup_iters: 0, measure_iters: 1, ..Default::default() };
        let r = sweep(&[], &cfg).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&r.rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), SWEEP_HEADER.join(","));
    }
}
