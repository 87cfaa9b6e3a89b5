//! Optimization and evaluation: AdamW, the learning-rate schedule,
//! pretraining, probing, fine-tuning, checkpoints and metrics.

pub mod checkpoint;
pub mod metrics;
pub mod optim;
pub mod pretrain;
pub mod probe;

pub use checkpoint::Checkpoint;
pub use metrics::{smoothed, MetricsLog, StepLog, SMOOTHING_WINDOW};
pub use optim::{lr_at, AdamW, OptimConfig, Schedule};
pub use pretrain::{pretrain, run_pretraining, Pretrainer, RunFiles};
pub use probe::{finetune, linear_probe, ClassifierResult};
