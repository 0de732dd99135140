//! Training orchestration: configs, checkpoints, the training loop,
//! evaluation, sweeps, and ablations.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod sweep;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{
    apply_override, load_config, preset, ExperimentConfig, InitializerConfig, NetworkSize,
    OptimizerConfig, Scale, TrainingMode,
};
pub use evaluate::{evaluate_checkpoint, evaluate_params, SplitName};
pub use sweep::{
    ablation, ensure_run, ensure_runs, student_config, sweep_teachers, teacher_config,
    AblationResults, RunRecord, RunRequest, SweepResults,
};
pub use trainer::{train, ModelParams, TrainOutcome};
