//! Experiment runs: configuration, training, evaluation and output files.

mod config;
mod evaluate;
mod plot;
mod run;
mod train;

pub use config::{DataConfig, EvalConfig, ExperimentKind, ModelConfig, Objective, RunConfig, Schedule, TrainConfig};
pub use evaluate::{acc_csv, energy_csv, evaluate, metrics_csv, predict_accel, summary_csv, EnergyTrace, Metrics};
pub use plot::{line_chart, Series};
pub use run::{inspect, loss_csv, run_eval, run_train, write_eval_outputs};
pub use train::{
    build_model, load_data, projection_check, total_epochs, train, Checkpoint, EpochLog, Model, ProjectionCheck, RunData, Status, TrainOutcome,
};

#[cfg(test)]
mod tests;
