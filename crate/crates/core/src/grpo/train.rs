use serde::{Deserialize, Serialize};

use super::objective::{grpo_loss_and_grad, mean_event_kl, GroupBatch, KlDirection, LossBreakdown, ObjectiveConfig};
use crate::env::{
    inference_schedule, sample_training_schedule, rollout_group, EpisodeRecord, PolicyActor, RefinementSchedule,
    RolloutEnv, RolloutKind,
};
use crate::error::{config_err, Error, Result};
use crate::numerics::{AdamState, ParamBlocks, RandomSource};
use crate::policy::{Feedback, PolicyParams};
use crate::prompt::{Query, Vocabulary};

/// Which variant of the refinement loop is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Multi-step refinement observing `x̂`.
    #[default]
    ClosedLoop,
    /// Multi-step refinement with `x̂` masked.
    Blind,
    /// One refinement at `t = T` with `x̂` masked.
    FeedForward,
}

impl Regime {
    pub fn feedback(self) -> Feedback {
        match self {
            Regime::ClosedLoop => Feedback::Visible,
            Regime::Blind | Regime::FeedForward => Feedback::Masked,
        }
    }

    pub fn kind(self) -> RolloutKind {
        match self {
            Regime::ClosedLoop => RolloutKind::ClosedLoop,
            Regime::Blind => RolloutKind::Blind,
            Regime::FeedForward => RolloutKind::FeedForward,
        }
    }
}

/// When the training refinement set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSharing {
    /// One set per query, shared by the whole group.
    #[default]
    PerQuery,
    /// A fresh set for every group member.
    PerMember,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub kl_direction: KlDirection,
    /// Adam step size for the small policy MLP (a full-size language policy would use ~5e-6).
    pub lr: f64,
    pub inner_iterations: usize,
    pub std_eps: f64,
    pub queries_per_batch: usize,
    pub updates: usize,
    pub refine_steps: usize,
    pub regime: Regime,
    pub schedule_sharing: ScheduleSharing,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.005,
            kl_direction: KlDirection::OldNew,
            lr: 1e-3,
            inner_iterations: 1,
            std_eps: 1e-8,
            queries_per_batch: 16,
            updates: 1000,
            refine_steps: 2,
            regime: Regime::ClosedLoop,
            schedule_sharing: ScheduleSharing::PerQuery,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.group_size < 2 {
            return Err(config_err(format!("group size must be at least 2, got {}", self.group_size)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(config_err(format!("clip epsilon must be in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.kl_coef >= 0.0) {
            return Err(config_err("KL coefficient must be non-negative"));
        }
        if !(self.lr > 0.0) || self.inner_iterations == 0 || self.queries_per_batch == 0 {
            return Err(config_err("learning rate, inner iterations and queries per batch must be positive"));
        }
        if self.refine_steps == 0 || self.refine_steps > horizon {
            return Err(config_err(format!("refine steps must be in 1..={horizon}, got {}", self.refine_steps)));
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig { clip_eps: self.clip_eps, kl_coef: self.kl_coef, kl_direction: self.kl_direction }
    }
}

/// One row of training metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    pub mean_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    pub mean_alignment: f64,
    pub mean_length_penalty: f64,
    pub mean_format: f64,
    /// Mean per-event KL between the rollout policy and the updated policy.
    pub mean_kl: f64,
    pub advantage_std: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub skipped_groups: usize,
}

/// Everything needed to continue training from an update boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub next_update: usize,
}

impl TrainerState {
    pub fn fresh(params: PolicyParams, lr: f64) -> Self {
        let adam = AdamState::new(&params, lr);
        Self { params, adam, next_update: 0 }
    }
}

/// Frozen pieces of the training problem.
pub struct PolicyTask<'a> {
    pub env: RolloutEnv<'a>,
    pub vocab: &'a Vocabulary,
    /// Queries sampled uniformly at each step.
    pub queries: &'a [Query],
}

fn training_schedules(
    config: &GrpoConfig,
    horizon: usize,
    rng: &mut RandomSource,
) -> Result<Vec<RefinementSchedule>> {
    if config.regime == Regime::FeedForward {
        return Ok(vec![inference_schedule(horizon, 1)?]);
    }
    let n = match config.schedule_sharing {
        ScheduleSharing::PerQuery => 1,
        ScheduleSharing::PerMember => config.group_size,
    };
    (0..n).map(|_| sample_training_schedule(horizon, config.refine_steps, rng)).collect()
}

/// Collect the groups of one update. Groups with a non-finite latent are skipped.
pub fn collect_groups(
    task: &PolicyTask<'_>,
    params: &PolicyParams,
    config: &GrpoConfig,
    rng: &RandomSource,
) -> Result<(Vec<GroupBatch>, usize)> {
    let horizon = task.env.schedule.steps();
    let feedback = config.regime.feedback();
    let actor = PolicyActor::new(params, task.vocab, feedback);
    let mut batches = Vec::with_capacity(config.queries_per_batch);
    let mut skipped = 0;
    for b in 0..config.queries_per_batch {
        let mut qrng = rng.split_indexed("query", b as u64);
        let q = &task.queries[qrng.below(task.queries.len())];
        let schedules = training_schedules(config, horizon, &mut qrng)?;
        let group = rollout_group(
            &task.env,
            &actor,
            q,
            &schedules,
            config.group_size,
            &qrng.split("group"),
            config.regime.kind(),
        );
        match group {
            Ok(episodes) => batches.push(GroupBatch::new(episodes, feedback, config.std_eps)?),
            Err(Error::Episode { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((batches, skipped))
}

fn summarize(update: usize, batches: &[GroupBatch], loss: LossBreakdown, kl: f64, skipped: usize) -> UpdateMetrics {
    let eps: Vec<&EpisodeRecord> = batches.iter().flat_map(|b| &b.episodes).collect();
    let n = eps.len().max(1) as f64;
    let advs: Vec<f64> = batches.iter().flat_map(|b| b.advantages.iter().copied()).collect();
    let adv_mean = advs.iter().sum::<f64>() / advs.len().max(1) as f64;
    let adv_std = (advs.iter().map(|a| (a - adv_mean).powi(2)).sum::<f64>() / advs.len().max(1) as f64).sqrt();
    UpdateMetrics {
        update,
        mean_reward: eps.iter().map(|e| e.reward.total).sum::<f64>() / n,
        min_reward: eps.iter().map(|e| e.reward.total).fold(f64::INFINITY, f64::min),
        max_reward: eps.iter().map(|e| e.reward.total).fold(f64::NEG_INFINITY, f64::max),
        mean_alignment: eps.iter().map(|e| e.reward.alignment).sum::<f64>() / n,
        mean_length_penalty: eps.iter().map(|e| e.reward.length_penalty).sum::<f64>() / n,
        mean_format: eps.iter().map(|e| e.reward.format).sum::<f64>() / n,
        mean_kl: kl,
        advantage_std: adv_std,
        loss: loss.loss,
        clip_fraction: loss.clip_fraction,
        skipped_groups: skipped,
    }
}

/// One on-policy update: collect groups with the current policy, then take
/// `inner_iterations` Adam steps on the GRPO loss against the frozen rollout policy.
pub fn grpo_update(
    task: &PolicyTask<'_>,
    state: &mut TrainerState,
    config: &GrpoConfig,
    rng: &RandomSource,
) -> Result<UpdateMetrics> {
    let update = state.next_update;
    let urng = rng.split_indexed("update", update as u64);
    let (batches, skipped) = collect_groups(task, &state.params, config, &urng)?;
    let mut last = LossBreakdown::default();
    let mut kl = 0.0;
    if !batches.is_empty() {
        state.adam.lr = config.lr;
        for _ in 0..config.inner_iterations {
            let (loss, grads) = grpo_loss_and_grad(&state.params, &batches, &config.objective())?;
            if !loss.loss.is_finite() || !grads.is_finite() {
                return Err(Error::Training { step: update, message: format!("non-finite GRPO loss {}", loss.loss) });
            }
            state.adam.step(&mut state.params, &grads)?;
            last = loss;
        }
        kl = mean_event_kl(&state.params, &batches, config.kl_direction)?;
    }
    state.next_update += 1;
    Ok(summarize(update, &batches, last, kl, skipped))
}

/// Run updates until `config.updates`, calling `on_update` after each one
/// (checkpointing hooks go there). Update `u` draws from `rng.split_indexed("update", u)`,
/// so resuming from a saved [`TrainerState`] continues the identical run.
pub fn train_policy<F>(
    task: &PolicyTask<'_>,
    mut state: TrainerState,
    config: &GrpoConfig,
    rng: &RandomSource,
    mut on_update: F,
) -> Result<(TrainerState, Vec<UpdateMetrics>)>
where
    F: FnMut(&UpdateMetrics, &TrainerState) -> Result<()>,
{
    config.validate(task.env.schedule.steps())?;
    if task.queries.is_empty() {
        return Err(config_err("policy training needs at least one query"));
    }
    let mut metrics = Vec::new();
    while state.next_update < config.updates {
        let m = grpo_update(task, &mut state, config, rng)?;
        on_update(&m, &state)?;
        metrics.push(m);
    }
    Ok((state, metrics))
}
