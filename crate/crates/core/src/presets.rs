//! Named model presets, one per published table row, plus table groups.

use crate::error::{Error, Result};
use crate::net::{BackboneSpec, FpnKind, FpnSpec, HeadSpec, MainOp, MergeKind, ModelSpec};

pub const PRESETS: &[&str] = &[
    "yolox_tiny",
    "mbconv",
    "fused_mbconv",
    "mixed_f1",
    "mixed_f2",
    "mixed_f1_e1p5",
    "mixed_f2_e1p5",
    "sandglass",
    "regnetx",
    "picodet_ds",
    "picodet_bs",
    "picodet_ds_x2",
    "picodet_bs_x2",
    "pafpn_cat",
    "pafpn_sum",
    "lcpan_cat",
    "lcpan_sum",
    "sepfpn_cat",
    "sepfpn_sum",
];

pub const GROUPS: &[(&str, &[&str])] = &[
    ("table1", &["yolox_tiny", "mbconv", "mixed_f1", "fused_mbconv", "regnetx", "sandglass"]),
    ("table2", &["yolox_tiny", "mixed_f1", "mixed_f2", "mixed_f1_e1p5", "mixed_f2_e1p5"]),
    ("table3", &["yolox_tiny", "picodet_ds", "picodet_bs", "picodet_ds_x2", "picodet_bs_x2"]),
    ("table4", &["yolox_tiny", "picodet_ds", "picodet_bs", "picodet_ds_x2", "picodet_bs_x2"]),
    ("table5", &["pafpn_cat", "lcpan_cat", "pafpn_sum", "lcpan_sum", "sepfpn_cat"]),
];

fn tiny(name: &str, backbone: BackboneSpec, fpn: FpnSpec) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input_size: 416,
        backbone,
        fpn,
        head: HeadSpec { num_classes: 80, head_width: 96, levels: 3 },
    }
}

fn mixed(fused: usize, expand: f64) -> BackboneSpec {
    BackboneSpec { fused_stage_count: fused, expand_ratio: expand, ..BackboneSpec::csp_darknet(MainOp::Mixed) }
}

pub fn preset(name: &str) -> Result<ModelSpec> {
    use FpnKind::*;
    use MergeKind::*;
    let pafpn = FpnSpec::new(Pafpn, Concat);
    let csp = |op| BackboneSpec::csp_darknet(op);
    let f2e = mixed(2, 1.5);
    Ok(match name {
        "yolox_tiny" => tiny(name, csp(MainOp::CspLayer), pafpn),
        "mbconv" => tiny(name, csp(MainOp::MbConv), pafpn),
        "fused_mbconv" => tiny(name, csp(MainOp::FusedMbConv), pafpn),
        "mixed_f1" => tiny(name, mixed(1, 1.0), pafpn),
        "mixed_f2" => tiny(name, mixed(2, 1.0), pafpn),
        "mixed_f1_e1p5" => tiny(name, mixed(1, 1.5), pafpn),
        "mixed_f2_e1p5" => tiny(name, f2e, pafpn),
        "sandglass" => tiny(name, csp(MainOp::Sandglass), pafpn),
        "regnetx" => tiny(name, csp(MainOp::RegNetX), pafpn),
        "picodet_ds" => tiny(name, BackboneSpec::pp_lcnet(MainOp::DsConv, 1), pafpn),
        "picodet_bs" => tiny(name, BackboneSpec::pp_lcnet(MainOp::BsConv, 1), pafpn),
        // the wider nets feed an LCPAN that equalizes everything to 96 channels
        "picodet_ds_x2" => tiny(name, BackboneSpec::pp_lcnet(MainOp::DsConv, 2), FpnSpec::new(Lcpan, Concat)),
        "picodet_bs_x2" => tiny(name, BackboneSpec::pp_lcnet(MainOp::BsConv, 2), FpnSpec::new(Lcpan, Concat)),
        "pafpn_cat" => tiny(name, f2e, pafpn),
        "pafpn_sum" => tiny(name, f2e, FpnSpec::new(Pafpn, Sum)),
        "lcpan_cat" => tiny(name, f2e, FpnSpec::new(Lcpan, Concat)),
        "lcpan_sum" => tiny(name, f2e, FpnSpec::new(Lcpan, Sum)),
        "sepfpn_cat" => tiny(name, f2e, FpnSpec::new(SepFpn, Concat)),
        "sepfpn_sum" => tiny(name, f2e, FpnSpec::new(SepFpn, Sum)),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    })
}

/// Presets of a table group, or every preset for "all".
pub fn group(name: &str) -> Result<Vec<&'static str>> {
    if name == "all" {
        return Ok(PRESETS.to_vec());
    }
    GROUPS
        .iter()
        .find(|(g, _)| *g == name)
        .map(|(_, p)| p.to_vec())
        .ok_or_else(|| Error::UnknownGroup(name.to_string()))
}
