//! Multimodal interaction-graph classification with an adaptive residual,
//! multi-head graph attention network.
//!
//! Pipeline: records ([`graph::MultimodalRecord`]) are embedded into
//! post/image/comment nodes ([`graph::InteractionGraph`]), batched
//! block-diagonally ([`graph::GraphBatch`]), and classified by
//! [`model::MagicModel`], trained with Adam ([`train`]) and scored with
//! macro-averaged metrics ([`metrics`]).

pub mod cli;
pub mod error;
pub mod gat;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};

/// Derives an independent stream seed from a base seed and a stream id.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    io::splitmix64(seed ^ io::splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
