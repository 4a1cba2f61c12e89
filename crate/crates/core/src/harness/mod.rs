//! Experiment harness: configuration, architectures, schedules, the
//! training loop and evaluation.

mod arch;
mod config;
mod eval;
mod schedule;
mod train;

pub use arch::parse_architecture;
pub use config::{
    DatasetKind, ExperimentConfig, InitChoice, OptimizerKind, Precision, WhitenChoice,
    CONFIG_VERSION,
};
pub use eval::{dump_features, evaluate, evaluate_split, Evaluation};
pub use schedule::{freeze_schedule_step, FreezeEntry, FreezeSchedule};
pub use train::{
    load_data, prepare_inputs, run_experiment, run_with_data, BatchView, EpochReport,
    ExperimentData, RunSummary, Trainer,
};
