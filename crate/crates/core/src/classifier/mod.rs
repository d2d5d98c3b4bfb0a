//! Residual CNN classifier: kernels, model, training and checkpoints.

mod checkpoint;
mod model;
mod ops;
mod scalar;
mod train;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, MAGIC, VERSION};
pub use model::{decide, param_count, softmax, BatchStats, LossGrad, Model, ModelConfig, NormMode, ParamKind, ParamSpec};
pub use scalar::Scalar;
pub use train::{accuracy, fit, split_indices, train, Adam, EpochRecord, TrainConfig, TrainReport};
