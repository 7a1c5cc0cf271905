//! Behavior-cloning training: loss terms and the seeded epoch loop.

pub mod loss;
pub mod trainer;

pub use loss::{covariance, disent_penalty, disent_value, l1l2_penalty, l1l2_value};
pub use trainer::{
    param_checksum, train, train_segment, EpochStats, TrainConfig, TrainLog, TrainState,
};
