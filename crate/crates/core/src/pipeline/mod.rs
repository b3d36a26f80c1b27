//! Data ingestion, splitting, training loops and experiment drivers.

pub mod backend;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod record;
pub mod split;
pub mod train;

pub use backend::Backend;
pub use config::{Config, TrainConfig};
pub use dataset::{load_yolo_dataset, Dataset};
pub use experiment::{run_experiment, synthetic_data, ExperimentData, ExperimentMode};
pub use record::RunRecord;
pub use split::{label_budget_split, mc_split, SplitSpec};
pub use train::{train_supervised, train_weedteacher, DetectorFactory, TrainControl};
