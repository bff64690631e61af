//! A small autoregressive decoder that maps query vectors to entity codes,
//! trained with hand-written reverse-mode gradients.

pub mod checkpoint;
pub mod decode;
pub mod model;
mod ops;
pub mod task;
pub mod train;

pub use decode::{beam_decode, greedy_decode, DecodeOptions, Hypothesis};
pub use model::{ModelConfig, Params, TinyGerModel, TrainingExample};
pub use task::{make_synthetic_task, Split, SyntheticTask, TaskConfig};
pub use train::{train, TrainConfig, TrainReport};
