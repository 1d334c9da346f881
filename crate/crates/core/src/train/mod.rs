pub mod augment;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod optim;
pub mod trainer;

pub use augment::{augment, AugmentConfig, FlipAxis};
pub use config::RunConfig;
pub use dataset::{collate, make_shapes_dataset, Sample};
pub use eval::{evaluate, predict, MULTI_SCALES};
pub use optim::{poly_lr, OptimizerState, Sgd};
pub use trainer::{train, EpochRecord, TrainConfig, TrainOutcome};
