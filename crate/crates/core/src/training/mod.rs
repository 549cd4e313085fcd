//! Frame targets, losses and staged training.
//!
//! Three stages are supported:
//!
//! - `bilingual-pretrain`: every monolingual utterance is routed through its
//!   own locale's PE and per-locale head; the shared stack sees both locales.
//! - `lid-finetune`: after pretraining, the shared stack is frozen and the PE
//!   stacks, LID head and combined head train on `CE(combined) + w·CE(lid)`.
//! - `aux-joint`: from scratch, `main·CE(shared head) + Σ aux·CE(locale head)`.
//!
//! Within a batch each utterance gets its own tape and the gradients are
//! accumulated in batch order, so no padding is involved; each per-utterance
//! loss is divided by the batch frame count, making the step a mean over all
//! batch frames.

mod checkpoint;
mod loss;
mod plan;
mod targets;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, HEADER_FILE, PARAMS_FILE};
pub use loss::{loss_aux, loss_bilingual, loss_lid, stage_loss, StageLoss};
pub use plan::{Stage, TrainingPlan};
pub use targets::{make_frame_targets, FrameTargets};
pub use trainer::{
    check_stage_prerequisites, train_stage, train_step, EpochRecord, StepStats, TrainExample,
    TrainLog,
};
