//! Patch embedding, attention blocks and the forecaster.

mod checkpoint;
mod config;
mod forecaster;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, VqPlacement};
pub use forecaster::{
    ffn_param_count, patchify, EmbeddingSource, Forecaster, ForwardOptions, ForwardOutput,
    ParamBreakdown,
};
pub use params::{BoundParams, ParamId, ParamStore};
