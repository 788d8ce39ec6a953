//! Check computed params/Gflops against the bundled reference tables.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::Result;
use crate::graph::Component;
use crate::net::compile;
use crate::presets::preset;
use crate::profiler::{count_flops, AnalysisReport};
use crate::reference::{reference_tables, ReferenceRow, ReferenceTable, Scope};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Params,
    Gflops,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub table: String,
    pub label: String,
    pub preset: String,
    pub metric: Metric,
    pub computed: f64,
    pub reference: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub table: String,
    pub label: String,
    pub column: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub table: String,
    pub metric: Metric,
    /// "a < b" as in the reference table.
    pub relation: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cells: Vec<CellCheck>,
    pub skipped: Vec<SkippedCell>,
    pub orderings: Vec<OrderingCheck>,
    pub all_pass: bool,
}

/// Relative tolerance for one cell.
pub fn tolerance(table: &str, preset: &str, metric: Metric) -> f64 {
    if preset == "yolox_tiny" {
        return 0.02;
    }
    match (table, metric) {
        ("table1", _) if preset == "regnetx" => 0.10,
        ("table2", Metric::Params) => 0.02,
        ("table2", Metric::Gflops) => 0.03,
        _ => 0.05,
    }
}

fn value(report: &AnalysisReport, scope: Scope, metric: Metric) -> f64 {
    let r = match scope {
        Scope::Backbone => report.component(Component::Backbone),
        Scope::Total => report.total,
    };
    match metric {
        Metric::Params => r.params_m,
        Metric::Gflops => r.gflops,
    }
}

fn reference(row: &ReferenceRow, metric: Metric) -> f64 {
    match metric {
        Metric::Params => row.params_m,
        Metric::Gflops => row.gflops,
    }
}

/// Analyses at 416x416 for every preset named in the reference tables.
pub fn analyze_reference_presets() -> Result<BTreeMap<String, AnalysisReport>> {
    let mut out = BTreeMap::new();
    for t in &reference_tables().tables {
        for row in &t.rows {
            if !out.contains_key(&row.preset) {
                let spec = preset(&row.preset)?;
                let g = compile(&spec)?;
                out.insert(row.preset.clone(), count_flops(&g, (spec.input_size, spec.input_size))?);
            }
        }
    }
    Ok(out)
}

/// `tolerance_override` replaces every per-cell tolerance when given.
pub fn verify_tables(tolerance_override: Option<f64>) -> Result<VerificationReport> {
    let reports = analyze_reference_presets()?;
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut orderings = Vec::new();
    for t in &reference_tables().tables {
        for row in &t.rows {
            let rep = &reports[&row.preset];
            for metric in [Metric::Params, Metric::Gflops] {
                let computed = value(rep, t.scope, metric);
                let reference = reference(row, metric);
                let rel_err = (computed - reference).abs() / reference;
                let tolerance = tolerance_override.unwrap_or_else(|| tolerance(&t.id, &row.preset, metric));
                cells.push(CellCheck {
                    table: t.id.clone(),
                    label: row.label.clone(),
                    preset: row.preset.clone(),
                    metric,
                    computed,
                    reference,
                    rel_err,
                    tolerance,
                    pass: rel_err <= tolerance,
                });
            }
            for (col, present) in [("gpu_ms", row.gpu_ms.is_some()), ("cpu_ms", row.cpu_ms.is_some()), ("map", true)] {
                if present {
                    skipped.push(SkippedCell {
                        table: t.id.clone(),
                        label: row.label.clone(),
                        column: col.into(),
                        reason: if col == "map" { "requires training".into() } else { "hardware specific".into() },
                    });
                }
            }
        }
        orderings.extend(table_orderings(t, &reports));
    }
    let all_pass = cells.iter().all(|c| c.pass) && orderings.iter().all(|o| o.pass);
    Ok(VerificationReport { cells, skipped, orderings, all_pass })
}

/// Every pairwise ordering of distinct reference values must hold in the computed values.
pub fn table_orderings(t: &ReferenceTable, reports: &BTreeMap<String, AnalysisReport>) -> Vec<OrderingCheck> {
    let mut out = Vec::new();
    for metric in [Metric::Params, Metric::Gflops] {
        for (i, a) in t.rows.iter().enumerate() {
            for b in &t.rows[i + 1..] {
                let (ra, rb) = (reference(a, metric), reference(b, metric));
                if ra == rb || a.preset == b.preset {
                    continue;
                }
                let (lo, hi) = if ra < rb { (a, b) } else { (b, a) };
                let cl = value(&reports[&lo.preset], t.scope, metric);
                let ch = value(&reports[&hi.preset], t.scope, metric);
                out.push(OrderingCheck {
                    table: t.id.clone(),
                    metric,
                    relation: format!("{} < {}", lo.preset, hi.preset),
                    pass: cl < ch,
                });
            }
        }
    }
    out
}
