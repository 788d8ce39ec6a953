//! `detbench`: list presets, inspect and count models, time them, sweep
//! table groups and check counts against the bundled reference tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detbench_core::bench::{write_sweep_outputs, LatencyReport};
use detbench_core::net::{FpnKind, MainOp, MergeKind};
use detbench_core::presets::GROUPS;
use detbench_core::profiler::{count_flops_with, CountingRule};
use detbench_core::reference::reference_tables;
use detbench_core::verify::VerificationReport;
use detbench_core::{
    compile, group, preset, run_bench, sweep, verify_tables, BenchConfig, Component, Error, ModelSpec, PRESETS,
};

const EXIT_SPEC: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "detbench", version, about = "Cost and CPU latency reports for lightweight YOLOX-style detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Presets grouped by reference table
    ListPresets,
    /// Print a model description as JSON
    Show {
        #[command(flatten)]
        model: ModelArgs,
        /// Also list the compiled nodes
        #[arg(long)]
        nodes: bool,
    },
    /// Params and Gflops per component
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = Rule::Architecture)]
        rule: Rule,
        /// Print the full report as JSON instead of a table
        #[arg(long)]
        json: bool,
        /// Write the report to a file (.csv for rollups, anything else for JSON)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time one model and write bench_<name>.json
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        timing: TimingArgs,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Time several models; writes the CSV, scatter.json and per-model reports
    Sweep {
        /// Presets to include
        presets: Vec<String>,
        /// Add every preset of a group (table1..table5, all)
        #[arg(long)]
        preset_group: Vec<String>,
        /// Add a model description file
        #[arg(long)]
        config: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        timing: TimingArgs,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Compare computed params/Gflops with the reference tables
    VerifyTables {
        /// Use one tolerance (percent) for every cell
        #[arg(long)]
        tolerance_pct: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Preset name (see list-presets)
    preset: Option<String>,
    /// Model description file (JSON) instead of a preset
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Square input side, a multiple of 32
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    expand_ratio: Option<f64>,
    /// Switch the backbone to mixed bottlenecks with this many fused stages
    #[arg(long)]
    fused_stage_count: Option<usize>,
    #[arg(long)]
    channel_multiplier: Option<usize>,
    #[arg(long, value_enum)]
    fpn: Option<Fpn>,
    #[arg(long, value_enum)]
    merge: Option<Merge>,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Architecture,
    Deployed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fpn {
    Pafpn,
    Lcpan,
    Sepfpn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Merge {
    Concat,
    Sum,
}

/// Anything that ends the run early, with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let mut message = e.to_string();
        if matches!(e, Error::UnknownPreset(_)) {
            message.push_str(&format!("\navailable presets: {}", PRESETS.join(", ")));
        }
        Failure { code: if e.is_spec_error() { EXIT_SPEC } else { 1 }, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl Overrides {
    fn is_empty(&self) -> bool {
        let o = self;
        o.expand_ratio.is_none()
            && o.fused_stage_count.is_none()
            && o.channel_multiplier.is_none()
            && o.fpn.is_none()
            && o.merge.is_none()
    }

    fn apply(&self, mut m: ModelSpec) -> ModelSpec {
        if let Some(s) = self.input_size {
            m.input_size = s;
        }
        if self.is_empty() {
            return m;
        }
        let base = m.name.clone();
        if let Some(t) = self.expand_ratio {
            m.backbone.expand_ratio = t;
        }
        if let Some(n) = self.fused_stage_count {
            m.backbone.main_op = MainOp::Mixed;
            m.backbone.fused_stage_count = n;
        }
        if let Some(c) = self.channel_multiplier {
            m.backbone.channel_multiplier = c;
        }
        if let Some(f) = self.fpn {
            m.fpn.kind = match f {
                Fpn::Pafpn => FpnKind::Pafpn,
                Fpn::Lcpan => FpnKind::Lcpan,
                Fpn::Sepfpn => FpnKind::SepFpn,
            };
        }
        if let Some(k) = self.merge {
            m.fpn.merge = match k {
                Merge::Concat => MergeKind::Concat,
                Merge::Sum => MergeKind::Sum,
            };
        }
        // An override that lands exactly on another preset takes its name;
        // anything else gets a new name so no reported mAP is attached to it.
        let same = |p: &&&str| preset(p).is_ok_and(|q| ModelSpec { name: m.name.clone(), input_size: m.input_size, ..q } == m);
        m.name = match PRESETS.iter().find(same) {
            Some(p) => p.to_string(),
            None => format!("{base}-custom"),
        };
        m
    }
}

fn load_config(path: &Path) -> CliResult<ModelSpec> {
    let text = fs::read_to_string(path).map_err(|e| Failure { code: EXIT_SPEC, message: format!("{}: {e}", path.display()) })?;
    Ok(ModelSpec::from_json(&text)?)
}

impl ModelArgs {
    fn resolve(&self) -> CliResult<ModelSpec> {
        let m = match (&self.preset, &self.config) {
            (Some(p), _) => preset(p)?,
            (None, Some(path)) => load_config(path)?,
            (None, None) => {
                return Err(Failure { code: EXIT_SPEC, message: "give a preset name or --config FILE".into() })
            }
        };
        let m = self.overrides.apply(m);
        m.validate()?;
        Ok(m)
    }
}

impl TimingArgs {
    fn config(&self, input_size: usize) -> BenchConfig {
        BenchConfig { warmup_iters: self.warmup, measure_iters: self.iters, input_size, seed: self.seed, ..BenchConfig::default() }
    }
}

fn reported_map(name: &str) -> Option<f64> {
    reference_tables().map_for(name)
}

fn map_text(map: Option<f64>) -> String {
    map.map_or("-".into(), |v| format!("{v:.1} (reported)"))
}

fn list_presets() {
    let mut grouped: Vec<&str> = Vec::new();
    for (g, members) in GROUPS {
        println!("{g}: {}", members.join(" "));
        grouped.extend(members.iter());
    }
    let rest: Vec<&str> = PRESETS.iter().copied().filter(|p| !grouped.contains(p)).collect();
    if !rest.is_empty() {
        println!("other: {}", rest.join(" "));
    }
}

fn show(model: &ModelArgs, nodes: bool) -> CliResult<()> {
    let m = model.resolve()?;
    println!("{}", m.to_json()?);
    if nodes {
        let g = compile(&m)?;
        for n in g.nodes() {
            println!("{:<48} {:<15} {:<8} c={:<4} s={}", n.name, n.op.kind(), n.component.label(), n.channels, n.stride);
        }
    }
    Ok(())
}

fn analyze(model: &ModelArgs, rule: Rule, json: bool, out: Option<&Path>) -> CliResult<()> {
    let m = model.resolve()?;
    let rule = match rule {
        Rule::Architecture => CountingRule::Architecture,
        Rule::Deployed => CountingRule::Deployed,
    };
    let mut report = count_flops_with(&compile(&m)?, (m.input_size, m.input_size), rule)?;
    report.map = reported_map(&m.name);
    if let Some(path) = out {
        if path.extension().is_some_and(|e| e == "csv") {
            report.write_rollup_csv(fs::File::create(path)?)?;
        } else {
            fs::write(path, report.to_json()?)?;
        }
    }
    if json {
        println!("{}", report.to_json()?);
        return Ok(());
    }
    println!("{}  input {}x{}  rule {:?}", report.model, m.input_size, m.input_size, rule);
    println!("{:<10} {:>12} {:>10}", "component", "params (M)", "Gflops");
    for c in Component::ALL {
        let r = report.component(c);
        println!("{:<10} {:>12.4} {:>10.4}", c.label(), r.params_m, r.gflops);
    }
    println!("{:<10} {:>12.4} {:>10.4}", "Total", report.total.params_m, report.total.gflops);
    println!("mAP {}", map_text(report.map));
    Ok(())
}

fn print_latency(r: &LatencyReport) {
    let t = r.total;
    println!(
        "{}  median {:.3} ms  mean {:.3}  p95 {:.3}  cv {:.1}%{}",
        r.model,
        t.median,
        t.mean,
        t.p95,
        t.cv * 100.0,
        if r.unstable { "  UNSTABLE" } else { "" }
    );
    for c in Component::ALL {
        println!("  {:<9} {:>9.3} ms  {:>5.1}%", c.label(), r.component_median_ms(c), r.component_share_pct.get(c));
    }
    println!(
        "  additivity {:.3}%  timer pair {:.0} ns  empty node {:.0} ns  cpu {}",
        r.additivity_error * 100.0,
        r.calibration.timer_pair_ns,
        r.calibration.empty_node_ns,
        r.environment.cpu_model
    );
}

fn bench(model: &ModelArgs, timing: &TimingArgs, out: &Path) -> CliResult<()> {
    let m = model.resolve()?;
    let report = run_bench(&compile(&m)?, &timing.config(m.input_size))?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("bench_{}.json", m.name));
    fs::write(&path, report.to_json()?)?;
    print_latency(&report);
    println!("  mAP {}", map_text(reported_map(&m.name)));
    println!("wrote {}", path.display());
    Ok(())
}

fn run_sweep(
    presets: &[String],
    groups: &[String],
    configs: &[PathBuf],
    overrides: &Overrides,
    timing: &TimingArgs,
    out: &Path,
) -> CliResult<()> {
    let mut names: Vec<String> = presets.to_vec();
    for g in groups {
        names.extend(group(g)?.into_iter().map(String::from));
    }
    let mut models = Vec::new();
    for n in &names {
        if !models.iter().any(|m: &ModelSpec| &m.name == n) {
            models.push(overrides.apply(preset(n)?));
        }
    }
    let mut bad_configs = Vec::new();
    for path in configs {
        // a broken file becomes a failed row rather than aborting the sweep
        match fs::read_to_string(path).map_err(Error::from).and_then(|t| Ok(serde_json::from_str::<ModelSpec>(&t)?)) {
            Ok(m) => models.push(overrides.apply(m)),
            Err(e) => bad_configs.push((path.display().to_string(), e.to_string())),
        }
    }
    let cfg = timing.config(overrides.input_size.unwrap_or(416));
    let mut result = sweep(&models, &cfg)?;
    for (name, err) in bad_configs {
        result.rows.push(detbench_core::SweepRow {
            name,
            params_m: None,
            gflops: None,
            latency_ms: None,
            map: None,
            backbone_ms: None,
            fpn_ms: None,
            head_ms: None,
            unstable: false,
            error: Some(err),
        });
    }
    result.rows.sort_by(|a, b| a.name.cmp(&b.name));
    let written = write_sweep_outputs(&result, out)?;
    println!("{:<22} {:>9} {:>8} {:>11} {:>16}", "model", "params_m", "gflops", "latency_ms", "mAP");
    for r in &result.rows {
        match &r.error {
            Some(e) => println!("{:<22} error: {e}", r.name),
            None => println!(
                "{:<22} {:>9.4} {:>8.4} {:>11.3} {:>16}{}",
                r.name,
                r.params_m.unwrap_or_default(),
                r.gflops.unwrap_or_default(),
                r.latency_ms.unwrap_or_default(),
                map_text(r.map),
                if r.unstable { "  unstable" } else { "" }
            ),
        }
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    match result.failures() {
        0 => Ok(()),
        n => Err(Failure { code: EXIT_SPEC, message: format!("{n} model(s) failed; partial results written") }),
    }
}

fn print_verification(v: &VerificationReport) {
    println!("{:<7} {:<34} {:<7} {:>10} {:>10} {:>8} {:>6}  result", "table", "row", "metric", "computed", "reference", "err", "tol");
    for c in &v.cells {
        println!(
            "{:<7} {:<34} {:<7} {:>10.4} {:>10.4} {:>7.2}% {:>5.0}%  {}",
            c.table,
            c.label,
            format!("{:?}", c.metric).to_lowercase(),
            c.computed,
            c.reference,
            100.0 * (c.computed - c.reference) / c.reference,
            c.tolerance * 100.0,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    println!("\norderings");
    for o in &v.orderings {
        println!("{:<7} {:<7} {:<36} {}", o.table, format!("{:?}", o.metric).to_lowercase(), o.relation, if o.pass { "PASS" } else { "FAIL" });
    }
    println!("\nskipped: {} latency/mAP cells (hardware specific or require training)", v.skipped.len());
    let failed = v.cells.iter().filter(|c| !c.pass).count() + v.orderings.iter().filter(|o| !o.pass).count();
    println!("{}", if v.all_pass { "all checks pass".to_string() } else { format!("{failed} check(s) FAILED") });
}

fn verify(tolerance_pct: Option<f64>, json: bool) -> CliResult<()> {
    let v = verify_tables(tolerance_pct.map(|p| p / 100.0))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&v).map_err(Error::from)?);
    } else {
        print_verification(&v);
    }
    if v.all_pass {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VERIFY, message: "verification failed".into() })
    }
}

fn check_threads() -> CliResult<()> {
    match std::env::var("DETBENCH_THREADS") {
        Ok(v) if v.trim() != "1" => Err(Failure {
            code: EXIT_SPEC,
            message: format!("DETBENCH_THREADS={v}: measurements are single-threaded, only 1 is accepted"),
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    check_threads()?;
    match cli.command {
        Command::ListPresets => {
            list_presets();
            Ok(())
        }
        Command::Show { model, nodes } => show(&model, nodes),
        Command::Analyze { model, rule, json, out } => analyze(&model, rule, json, out.as_deref()),
        Command::Bench { model, timing, out } => bench(&model, &timing, &out),
        Command::Sweep { presets, preset_group, config, overrides, timing, out } => {
            run_sweep(&presets, &preset_group, &config, &overrides, &timing, &out)
        }
        Command::VerifyTables { tolerance_pct, json } => verify(tolerance_pct, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
