//! Building blocks, cost accounting and CPU latency measurement for
//! lightweight one-stage object detectors in the YOLOX family.
pub mod bench;
pub mod blocks;
pub mod error;
pub mod graph;
pub mod net;
pub mod presets;
pub mod profiler;
pub mod reference;
pub mod tensor;
pub mod verify;

pub use bench::{run_bench, sweep, BenchConfig, LatencyReport, SweepResult, SweepRow};
pub use blocks::{build_block, Block, BlockKind, BlockSpec};
pub use error::{Error, Result};
pub use graph::{Component, Graph};
pub use net::{build, compile, ModelSpec};
pub use presets::{group, preset, PRESETS};
pub use profiler::{component_breakdown, count_flops, count_params, AnalysisReport, CountingRule};
pub use tensor::{Shape, Tensor};
pub use verify::verify_tables;
