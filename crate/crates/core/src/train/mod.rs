//! Losses, optimizer, schedules, child tuning and the training loops.

mod child;
mod loops;
mod loss;
mod optim;
mod plan;

pub use child::ChildMask;
pub use loops::{
    finetune, fisher_mask, pretrain, sample_mask_positions, write_epoch_log, write_loss_curve, Best, EpochRecord,
    FinetuneReport, LossRecord, TrainState,
};
pub use loss::{focal_batch_loss, focal_loss, masked_pretrain_loss};
pub use optim::{adamw_step, warmup_schedule, AdamState, AdamW};
pub use plan::{AlphaMode, ChildTuning, SamplerKind, Stage, TrainPlan};
