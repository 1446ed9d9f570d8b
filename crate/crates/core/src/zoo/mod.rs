//! U-Net, Ghost U-Net and GPU-Net assembled as one layer graph with
//! interchangeable level blocks.

mod checkpoint;
mod graph;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use graph::{
    build_model, FeatureLevel, LayerGraph, ModelConfig, Node, UpConv, FULL_WIDTHS, LEVELS,
};
