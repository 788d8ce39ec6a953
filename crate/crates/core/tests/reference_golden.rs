//! The bundled reference tables are transcribed data. These pins catch an
//! accidental edit; the values are never recomputed.

use detbench_core::presets::GROUPS;
use detbench_core::reference::{reference_tables, Scope};
use detbench_core::preset;

// (table, preset, params_m, gflops, map)
const GOLDEN: &[(&str, &str, f64, f64, f64)] = &[
    ("table1", "yolox_tiny", 2.3723, 2.6648, 32.8),
    ("table1", "mbconv", 1.6080, 1.5884, 31.2),
    ("table1", "mixed_f1", 1.6167, 1.6953, 31.1),
    ("table1", "fused_mbconv", 3.7042, 3.9063, 32.3),
    ("table1", "regnetx", 1.6329, 1.6668, 31.3),
    ("table1", "sandglass", 1.3432, 1.3997, 30.8),
    ("table2", "yolox_tiny", 2.3723, 2.6648, 32.8),
    ("table2", "mixed_f1", 1.6167, 1.6953, 31.1),
    ("table2", "mixed_f2", 1.7978, 2.5971, 31.6),
    ("table2", "mixed_f1_e1p5", 1.9054, 2.2505, 32.5),
    ("table2", "mixed_f2_e1p5", 2.1771, 3.6032, 33.3),
    ("table3", "yolox_tiny", 2.3723, 2.6648, 32.8),
    ("table3", "picodet_ds", 0.5845, 0.6765, 28.2),
    ("table3", "picodet_bs", 0.6471, 1.0118, 28.2),
    ("table3", "picodet_ds_x2", 2.2358, 2.3710, 31.5),
    ("table3", "picodet_bs_x2", 2.4718, 3.6565, 32.7),
    ("table4", "yolox_tiny", 5.0559, 6.4510, 32.8),
    ("table4", "picodet_ds", 3.2680, 4.4628, 28.2),
    ("table4", "picodet_bs", 3.3307, 4.7980, 29.2),
    ("table4", "picodet_ds_x2", 3.7591, 5.5394, 31.5),
    ("table4", "picodet_bs_x2", 3.9951, 6.8249, 32.7),
    ("table5", "pafpn_cat", 4.8606, 7.3894, 33.3),
    ("table5", "lcpan_cat", 3.5535, 6.6907, 31.9),
    ("table5", "pafpn_sum", 4.7224, 7.2399, 32.0),
    ("table5", "lcpan_sum", 3.3845, 6.3338, 31.2),
    ("table5", "sepfpn_cat", 4.3532, 7.1149, 32.3),
];

#[test]
fn transcribed_cells_are_pinned() {
    let t = reference_tables();
    let rows: Vec<(&str, &str, f64, f64, f64)> = t
        .tables
        .iter()
        .flat_map(|tab| tab.rows.iter().map(move |r| (tab.id.as_str(), r.preset.as_str(), r.params_m, r.gflops, r.map)))
        .collect();
    assert_eq!(rows, GOLDEN);
}

#[test]
fn scopes_and_latency_columns() {
    let t = reference_tables();
    let scope = |id| t.table(id).unwrap().scope;
    assert_eq!([scope("table1"), scope("table2"), scope("table3")], [Scope::Backbone; 3]);
    assert_eq!([scope("table4"), scope("table5")], [Scope::Total; 2]);
    // GPU timings for the GPU tables, CPU timings for the CPU tables, both for table5
    for tab in &t.tables {
        for r in &tab.rows {
            let (gpu, cpu) = match tab.id.as_str() {
                "table1" | "table2" => (true, false),
                "table3" | "table4" => (false, true),
                _ => (true, true),
            };
            assert_eq!((r.gpu_ms.is_some(), r.cpu_ms.is_some()), (gpu, cpu), "{} {}", tab.id, r.preset);
        }
    }
}

#[test]
fn table_rows_match_preset_groups() {
    let t = reference_tables();
    for (id, members) in GROUPS {
        let presets: Vec<&str> = t.table(id).unwrap().rows.iter().map(|r| r.preset.as_str()).collect();
        let mut want = members.to_vec();
        let mut got = presets.clone();
        want.sort();
        got.sort();
        assert_eq!(got, want, "{id}");
        for p in presets {
            preset(p).unwrap();
        }
    }
}

#[test]
fn map_lookup_prefers_full_detector_rows() {
    let t = reference_tables();
    assert_eq!(t.map_for("picodet_bs"), Some(29.2));
    assert_eq!(t.map_for("sandglass"), Some(30.8));
    assert_eq!(t.map_for("sepfpn_sum"), None);
}
