//! The dual-path policy model and its alignment objective.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod train;

pub use checkpoint::{Checkpoint, Manifest};
pub use loss::{
    conflict_of, loss_ce_head, loss_dpo, loss_edl_head, loss_sft, loss_total, loss_total_with, pair_logprobs,
    DpoConfig, HeadLossConfig, LossBreakdown, Objective, Variant,
};
pub use model::{ModelConfig, ModelParams, OutputGrads, ParamSpec, PolicyOutput};
pub use train::{train, ReferencePolicy, StepRecord, TrainConfig, TrainOutcome, Trainer};
