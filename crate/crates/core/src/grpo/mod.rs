//! Token-level GRPO: group-normalized advantages, clipped surrogate, exact KL and the training loop.

mod objective;
mod train;

pub use objective::{
    group_advantages, grpo_loss_and_grad, kl_penalty, kl_penalty_directed, mean_event_kl, token_surrogate,
    GroupBatch, KlDirection, LossBreakdown, ObjectiveConfig,
};
pub use train::{
    collect_groups, grpo_update, train_policy, GrpoConfig, PolicyTask, Regime, ScheduleSharing, TrainerState,
    UpdateMetrics,
};
