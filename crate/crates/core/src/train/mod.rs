//! Losses, the Adam optimizer, the training loop and evaluation metrics.

mod adam;
mod loss;
mod metrics;
mod trainer;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use loss::{forward_kld, reverse_kld};
pub use metrics::{eval_metrics, Metrics};
pub use trainer::{train_loop, LossKind, Objective, TrainConfig, TrainFailure, TrainReport, Trainer};
