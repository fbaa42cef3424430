//! Embedding CNNs, relation heads and checkpoints.

mod checkpoint;
mod networks;

pub use checkpoint::{Blob, Checkpoint, Precision, RngState};
pub use networks::{
    flow_batch, frame_batch, sketch_batch, Branch, ConvSpec, ModelConfig, ModelParams, RelationNet, Stream,
    StreamConfig, StreamNet,
};
