use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn detbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detbench")).args(args).env_remove("DETBENCH_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = detbench(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("detbench-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Field names and types in document order; arrays contribute their first element.
fn schema(v: &Value, path: &str, out: &mut Vec<String>) {
    let kind = match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(n) if n.is_f64() => "float",
        Value::Number(_) => "int",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    };
    out.push(format!("{path}: {kind}"));
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| schema(x, &format!("{path}.{k}"), out)),
        Value::Array(a) => {
            if let Some(x) = a.first() {
                schema(x, &format!("{path}[]"), out);
            }
        }
        _ => {}
    }
}

fn check_golden(v: &Value, file: &str) {
    let mut lines = Vec::new();
    schema(v, "$", &mut lines);
    let got = lines.join("\n") + "\n";
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(file);
    let want = std::fs::read_to_string(&path).unwrap_or_default();
    assert_eq!(got, want, "schema drift in {}", path.display());
}

#[test]
fn analyze_json_schema_is_stable() {
    let v = json(&["analyze", "yolox_tiny", "--json"]);
    check_golden(&v, "analyze.schema");
    assert_eq!(v["total"]["params"], 5_055_855);
    assert_eq!(v["map"], 32.8);
}

#[test]
fn bench_writes_report_with_stable_schema() {
    let dir = scratch("bench");
    let d = dir.to_str().unwrap();
    let text = ok(&["bench", "picodet_ds", "--warmup", "1", "--iters", "3", "--input-size", "64", "--out", d]);
    assert!(text.contains("28.2 (reported)"), "{text}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("bench_picodet_ds.json")).unwrap()).unwrap();
    check_golden(&v, "bench.schema");
    assert_eq!(v["config"]["measure_iters"], 3);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn analyze_prints_totals_and_reported_map() {
    let text = ok(&["analyze", "yolox_tiny"]);
    assert!(text.contains("Total"));
    assert!(text.contains("5.0559"), "{text}");
    assert!(text.contains("mAP 32.8 (reported)"), "{text}");
}

#[test]
fn expand_override_matches_the_preset() {
    let a = json(&["analyze", "mixed_f2", "--expand-ratio", "1.5", "--json"]);
    let b = json(&["analyze", "mixed_f2_e1p5", "--json"]);
    assert_eq!(a, b);
}

#[test]
fn custom_overrides_carry_no_map() {
    let v = json(&["analyze", "mixed_f2", "--expand-ratio", "2.0", "--json"]);
    assert_eq!(v["model"], "mixed_f2-custom");
    assert!(v["map"].is_null());
    // same graph as fused_mbconv, but a different description, so still custom
    let v = json(&["analyze", "yolox_tiny", "--fused-stage-count", "4", "--json"]);
    assert_eq!(v["model"], "yolox_tiny-custom");
    assert_eq!(v["total"], json(&["analyze", "fused_mbconv", "--json"])["total"]);
}

#[test]
fn gflops_scale_with_input_area() {
    let a = json(&["analyze", "yolox_tiny", "--json"]);
    let b = json(&["analyze", "yolox_tiny", "--input-size", "832", "--json"]);
    assert_eq!(b["total"]["flops"].as_u64().unwrap(), 4 * a["total"]["flops"].as_u64().unwrap());
}

#[test]
fn list_presets_covers_every_group() {
    let text = ok(&["list-presets"]);
    for g in ["table1:", "table2:", "table3:", "table4:", "table5:"] {
        assert!(text.contains(g), "{text}");
    }
    assert!(text.contains("sepfpn_sum"));
}

#[test]
fn show_round_trips_through_config() {
    let dir = scratch("show");
    let spec = ok(&["show", "lcpan_sum"]);
    let file = dir.join("lcpan_sum.json");
    std::fs::write(&file, &spec).unwrap();
    let a = json(&["analyze", "--config", file.to_str().unwrap(), "--json"]);
    let b = json(&["analyze", "lcpan_sum", "--json"]);
    assert_eq!(a, b);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn exit_codes() {
    let out = detbench(&["analyze", "yolov9"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("yolox_tiny") && err.contains("picodet_bs_x2"), "{err}");

    assert_eq!(detbench(&["analyze", "yolox_tiny", "--input-size", "400"]).status.code(), Some(2));
    assert_eq!(detbench(&["analyze", "picodet_ds", "--fused-stage-count", "2"]).status.code(), Some(2));
    assert_eq!(detbench(&["verify-tables"]).status.code(), Some(0));
    // a tolerance nobody can meet
    assert_eq!(detbench(&["verify-tables", "--tolerance-pct", "0.0001"]).status.code(), Some(3));

    let threads = Command::new(env!("CARGO_BIN_EXE_detbench")).arg("list-presets").env("DETBENCH_THREADS", "4").output().unwrap();
    assert_eq!(threads.status.code(), Some(2));
    let one = Command::new(env!("CARGO_BIN_EXE_detbench")).arg("list-presets").env("DETBENCH_THREADS", "1").output().unwrap();
    assert!(one.status.success());
}

#[test]
fn verify_tables_reports_cells_orderings_and_skips() {
    let v = json(&["verify-tables", "--json"]);
    assert_eq!(v["all_pass"], true);
    assert_eq!(v["cells"].as_array().unwrap().len(), 52);
    assert!(!v["orderings"].as_array().unwrap().is_empty());
    let skipped = v["skipped"].as_array().unwrap();
    assert!(skipped.iter().any(|s| s["column"] == "map"));
    assert!(skipped.iter().any(|s| s["column"] == "cpu_ms"));
}

#[test]
fn sweep_group_and_partial_failure() {
    let dir = scratch("sweep");
    let csv = dir.join("sweep.csv");
    let c = csv.to_str().unwrap();
    let quick = ["--warmup", "0", "--iters", "1", "--input-size", "64"];

    let mut args = vec!["sweep", "--preset-group", "table1", "--out", c];
    args.extend(quick);
    ok(&args);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 7, "{text}");
    assert!(dir.join("scatter.json").exists() && dir.join("bench_yolox_tiny.json").exists());

    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"name\": \"broken\"}").unwrap();
    let mut args = vec!["sweep", "picodet_ds", "--config", bad.to_str().unwrap(), "--out", c];
    args.extend(quick);
    let out = detbench(&args);
    assert_eq!(out.status.code(), Some(2));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(text.contains("picodet_ds,"));
    std::fs::remove_dir_all(dir).unwrap();
}
