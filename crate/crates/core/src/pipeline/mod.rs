//! Stage-wise training: SFT on the grounding set, then DPO on the
//! preference set anchored to the SFT policy.

mod experiment;
mod train;

pub use crate::model::checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointManifest};
pub use train::{
    encode_pairs, encode_sft, preference_accuracy, train_ce, train_dpo, train_preference, train_sft, EpochSummary,
    Optimizer, Stage, TrainConfig, TrainLog, TrainLogRecord,
};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, ExperimentSummary, StepSeeds};
