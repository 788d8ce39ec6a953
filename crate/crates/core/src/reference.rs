//! Published per-model statistics bundled with the crate. Latency and mAP
//! are carried as metadata only.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Values cover the backbone only.
    Backbone,
    /// Values cover the full detector.
    Total,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: String,
    pub preset: String,
    pub params_m: f64,
    pub gflops: f64,
    pub gpu_ms: Option<f64>,
    pub cpu_ms: Option<f64>,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub id: String,
    pub title: String,
    pub scope: Scope,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTables {
    pub description: String,
    pub tables: Vec<ReferenceTable>,
}

pub const REFERENCE_JSON: &str = include_str!("../data/reference_tables.json");

pub fn reference_tables() -> &'static ReferenceTables {
    static TABLES: OnceLock<ReferenceTables> = OnceLock::new();
    TABLES.get_or_init(|| serde_json::from_str(REFERENCE_JSON).expect("bundled reference tables parse"))
}

impl ReferenceTables {
    pub fn table(&self, id: &str) -> Option<&ReferenceTable> {
        self.tables.iter().find(|t| t.id == id)
    }

    /// Reported mAP for a preset. Full-detector tables take precedence since
    /// their rows describe the whole model.
    pub fn map_for(&self, preset: &str) -> Option<f64> {
        let find = |scope| {
            self.tables
                .iter()
                .filter(|t| t.scope == scope)
                .flat_map(|t| &t.rows)
                .find(|r| r.preset == preset)
                .map(|r| r.map)
        };
        find(Scope::Total).or_else(|| find(Scope::Backbone))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_load() {
        let t = reference_tables();
        assert_eq!(t.tables.len(), 5);
        assert_eq!(t.table("table1").unwrap().rows.len(), 6);
        assert_eq!(t.map_for("picodet_bs"), Some(29.2));
        assert_eq!(t.map_for("mbconv"), Some(31.2));
        assert_eq!(t.map_for("sepfpn_sum"), None);
    }
}
