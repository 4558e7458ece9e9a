//! Gradients, Adam, the training loop with early stopping, and
//! cross-validation.

pub mod adam;
pub mod cv;
pub mod grad;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use cv::{cross_validate, CvSummary, FoldResult};
pub use grad::{finite_diff_check, gradients, FdReport, Grads};
pub use trainer::{fit, init_params, train, EpochRecord, TrainConfig, TrainHistory};
