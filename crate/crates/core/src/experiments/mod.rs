//! Study drivers: ground-truth data generation, the training loop,
//! evaluation metrics, protocol/tau sweeps, and file formats.

pub mod config;
pub mod data;
pub mod eval;
pub mod io;
pub mod sweep;
pub mod train;

pub use config::{DataInit, ExperimentKind, RunConfig};
pub use data::generate_training_data;
pub use eval::{l1_radial_error, rel_error};
pub use sweep::run_sweep;
pub use train::{run_training, MetricsRecord, TrainOutcome};

/// Stream tags partitioning the master seed into independent purposes.
pub(crate) mod tags {
    pub const DATA_INIT: u64 = 1;
    pub const DATA_SIM: u64 = 2;
    pub const TRAIN_BATCH: u64 = 3;
    pub const GEN_SIM: u64 = 4;
    pub const THETA_INIT: u64 = 5;
    pub const EVAL_INIT: u64 = 6;
    pub const EVAL_SIM: u64 = 7;
}
