//! Experiment configuration, the training loop with multi-run aggregation,
//! and the teacher/ensemble/student experiment matrix.

mod config;
mod matrix;
mod trainer;

pub use config::{
    preset_params, AugmentSection, DataSection, DgParams, DgPreset, DistillSection, Family, ModelSection, Role,
    TrainConfig, TrainSection,
};
pub use matrix::{plan, run_matrix, EnsembleSpec, ImportSpec, Job, LogitSource, MatrixSpec, ResultRow, TeacherSpec};
pub use trainer::{
    check_student_budget, train, train_run, EpochRecord, RunSummary, TrainOutcome, TrainSummary,
};
