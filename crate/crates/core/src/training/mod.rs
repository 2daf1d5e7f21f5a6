//! Initialization, optimizer, schedule, augmentation, the epoch loop, and
//! statistics over repeated runs.

pub mod augment;
pub mod init;
pub mod optim;
pub mod schedule;
pub mod stats;
pub mod trainer;

pub use augment::{augment_pad_crop_flip, pad_crop_flip};
pub use init::{conv_fans, xavier_bound, xavier_init};
pub use optim::{sgd_momentum_step, Sgd};
pub use schedule::{lr_schedule, TrainConfig};
pub use stats::{statistics_table, weight_statistics, WeightStats};
pub use trainer::{evaluate, predict_all, train_epochs, train_epochs_with, EpochMetrics, RunRecord};
