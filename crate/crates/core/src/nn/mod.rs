//! Minimal tensor math with reverse-mode gradients and the forecaster's
//! layers.

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use model::{model_forward, predict, Model, ModelConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
