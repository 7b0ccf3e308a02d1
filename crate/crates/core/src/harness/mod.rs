//! Experiment runner: teacher pretraining, the mode × subset × repeat grid,
//! hyperparameter sweeps and CSV reports.

mod config;
pub mod cost;
mod experiment;
pub mod report;

pub use config::{DataSource, ExperimentConfig, PretrainConfig, SynthConfig};
pub use cost::{measure_cost, Cost};
pub use experiment::{
    grid, load_task, pretrain, resolve_teacher, run_experiment, run_sweep, task_split, write_outputs, Cell, CellReport,
    CellResult, ExperimentOutcome, Pretrained, SweepParam, SweepRow, Workspace,
};
