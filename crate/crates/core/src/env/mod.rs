//! The refinement MDP: schedules, episode rollouts and a-priori prompt plans.

mod rollout;
mod schedule;

pub use rollout::{
    member_rng, policy_rollout, precompute_prompts, read_jsonl, rollout, rollout_group, rollout_members,
    rollout_precomputed, write_jsonl, ActorOutput, EpisodeRecord, FeedbackMode, FixedActor, IdentityActor,
    NearestModeController, PlanActor, PlanEntry, PolicyActor, PromptActor, PromptPlan, RefinementEvent,
    RolloutEnv, RolloutKind,
};
pub use schedule::{inference_schedule, sample_training_schedule, RefinementSchedule};
