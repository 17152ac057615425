//! Training loop, evaluation, exports and the checkpoint format.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{parse_kv, TrainConfig};
pub use eval::{
    evaluate, export_attention, export_embeddings, predict, predict_logits, prepare_graphs,
    EvalReport,
};
pub use metrics::{final_row, metrics_csv, parse_metrics_csv, MetricRow, METRIC_HEADER};
pub use train::train;
