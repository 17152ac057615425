//! Peak-heap benchmark of one training step: the graph model against a
//! baseline that enumerates every contiguous sub-video.

pub mod alloc;
mod cost;
mod measure;
mod report;

pub use alloc::CountingAlloc;
pub use cost::{analytic_cost, METHODS};
pub use measure::{measure_peak, subvideo_embedder, BenchConfig, MemReport, ModelKind};
pub use report::{
    detail_csv, linear_fit, summary_csv, svg_chart, sweep_and_report, LinearFit, Sweep, MEM_CSV,
    MEM_DETAIL_CSV, MEM_SVG, SWEEP_METHODS,
};
