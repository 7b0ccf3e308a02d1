//! Self-distillation with an EMA auxiliary student, and the baselines.
//!
//! The main student S minimises α·CE + (1−α)·τ²·KL(p_S′ ‖ p_S) by plain
//! SGD; after every step the auxiliary student S′ moves towards S by an
//! exponential moving average. S′ never receives gradients.

mod config;
mod losses;
mod train;

pub use config::{CeTemperature, Mode, TrainConfig};
pub use losses::{ce_loss, objective_on_tape, skd_loss, total_loss, LossVars, PROB_FLOOR};
pub use train::{
    accuracy, argmax_rows, ema_update, gap_csv, history_csv, initial_students, predict, predict_dataset, selected_students,
    sgd_step, train, StepRecord, Teacher, TrainState,
};
