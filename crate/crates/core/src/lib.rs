//! GPU-Net: ghost and ghost-pyramid (GP) modules for U-Net segmentation,
//! built on a small CPU tensor engine with hand-written backward passes.
//!
//! ```no_run
//! use gpunet::blocks::BlockKind;
//! use gpunet::zoo::{build_model, ModelConfig};
//! use gpunet::cost::model_cost;
//!
//! let cfg = ModelConfig::new(BlockKind::Gp);
//! let model = build_model::<f32>(&cfg, 0).unwrap();
//! let report = model_cost(&model, 192, 256).unwrap();
//! println!("{}", report.to_table());
//! ```

pub mod blocks;
pub mod checks;
pub mod cli;
pub mod cost;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor4};
