//! Run configuration and the binary checkpoint / feature container.

mod checkpoint;
mod config;

pub use checkpoint::{read_features, write_features, Checkpoint, Header, TensorEntry, MAGIC, VERSION};
pub use config::{RunConfig, TrainConfig};
