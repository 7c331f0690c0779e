//! File formats, run configuration and the fallback embedder.

mod checkpoint;
mod config;
mod embed;
mod meb;
mod report;

pub use checkpoint::{
    checkpoint_load, checkpoint_save, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{RunConfig, SEED_ENV};
pub(crate) use embed::splitmix64;
pub use embed::{embed_records, fallback_embed, tokenize};
pub use meb::{read_meb, read_store, write_meb, EmbeddingStore, MEB_MAGIC};
pub use report::{DatasetInfo, MetricsSummary, RunReport, SplitSizes};
