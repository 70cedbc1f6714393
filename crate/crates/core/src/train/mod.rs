pub mod data;
pub mod loss;
pub mod metrics;
pub mod noise;
pub mod optim;
pub mod schedule;
pub mod swa;
pub mod trainer;

pub use data::Dataset;
pub use loss::{bce_loss, PROB_CLAMP};
pub use metrics::MetricsReport;
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
pub use schedule::OneCycle;
pub use swa::{swa_start_epoch, Swa};
pub use trainer::{
    balanced_indices, evaluate, penultimate_features, penultimate_nc, predict_all, steps_per_epoch, train, train_epoch,
    EpochLog, EpochStats, TrainConfig, TrainOutcome, TrainRng, TRAIN_KEYS,
};
