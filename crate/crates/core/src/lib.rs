//! Temporal and visual graph model for unsupervised video domain adaptation.
//!
//! Each video becomes a graph over its sampled frames (temporal chain plus
//! feature-similarity edges). A graph-attention and edge-pooling stack turns
//! it into a fixed-size embedding, and adversarial discriminators at frame
//! and video level align source and target domains through a gradient
//! reversal layer.

pub mod adversarial;
pub mod autodiff;
mod codec;
pub mod data;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod membench;
pub mod model;
pub mod trainer;

pub use error::{Error, ErrorClass, FormatError, Result};

#[cfg(test)]
#[global_allocator]
static ALLOC: membench::CountingAlloc = membench::CountingAlloc;
