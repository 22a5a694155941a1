use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::schedule::RefinementSchedule;
use crate::diffusion::{estimate_from_eps, sampler_step, MixtureDataset, NoisePredictor, NoiseSchedule, Sample, SamplerKind};
use crate::error::{config_err, usage_err, Error, Result};
use crate::numerics::RandomSource;
use crate::policy::{ActionDistribution, Feedback, MdpState, PolicyParams};
use crate::prompt::{Prompt, Query, TokenKind, Vocabulary};
use crate::rewards::{RewardFn, RewardValue};

/// How the policy sees the latent during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Closed loop: every refinement observes `x̂_t`.
    On,
    /// Refinements happen during sampling but the `x̂` block is zeroed.
    Off,
    /// All prompts are produced before sampling with `x̂` zeroed, then replayed.
    Precomputed,
}

impl FeedbackMode {
    pub fn feedback(self) -> Feedback {
        match self {
            FeedbackMode::On => Feedback::Visible,
            FeedbackMode::Off | FeedbackMode::Precomputed => Feedback::Masked,
        }
    }
}

/// Label stored in every episode record and metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutKind {
    Identity,
    FeedForward,
    ClosedLoop,
    Blind,
    Precomputed,
    Controller,
    DiffusionRl,
}

impl RolloutKind {
    pub fn name(self) -> &'static str {
        match self {
            RolloutKind::Identity => "identity",
            RolloutKind::FeedForward => "feedforward",
            RolloutKind::ClosedLoop => "closed_loop",
            RolloutKind::Blind => "blind",
            RolloutKind::Precomputed => "precomputed",
            RolloutKind::Controller => "controller",
            RolloutKind::DiffusionRl => "diffusion_rl",
        }
    }
}

/// What an actor returns at a refinement step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    pub action: Prompt,
    pub log_prob: f64,
    /// Full per-slot distribution, kept for the GRPO update.
    pub dist: Option<ActionDistribution>,
}

/// Anything that proposes the next prompt from a state.
pub trait PromptActor: Sync {
    fn act(&self, state: &MdpState, rng: &mut RandomSource) -> Result<ActorOutput>;
}

/// Keeps the current prompt.
pub struct IdentityActor;

impl PromptActor for IdentityActor {
    fn act(&self, state: &MdpState, _: &mut RandomSource) -> Result<ActorOutput> {
        Ok(ActorOutput { action: state.prompt.clone(), log_prob: 0.0, dist: None })
    }
}

/// Always answers with the same prompt (the query itself if built from it).
pub struct FixedActor(pub Prompt);

impl PromptActor for FixedActor {
    fn act(&self, _: &MdpState, _: &mut RandomSource) -> Result<ActorOutput> {
        Ok(ActorOutput { action: self.0.clone(), log_prob: 0.0, dist: None })
    }
}

/// Samples from `π_θ` and counts its invocations.
pub struct PolicyActor<'a> {
    pub params: &'a PolicyParams,
    pub vocab: &'a Vocabulary,
    pub feedback: Feedback,
    calls: AtomicUsize,
}

impl<'a> PolicyActor<'a> {
    pub fn new(params: &'a PolicyParams, vocab: &'a Vocabulary, feedback: Feedback) -> Self {
        Self { params, vocab, feedback, calls: AtomicUsize::new(0) }
    }

    pub fn invocations(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl PromptActor for PolicyActor<'_> {
    fn act(&self, state: &MdpState, rng: &mut RandomSource) -> Result<ActorOutput> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let dist = self.params.distribution(state, self.feedback)?;
        let action = dist.sample(rng, self.vocab)?;
        let log_prob = dist.log_prob(&action)?;
        Ok(ActorOutput { action, log_prob, dist: Some(dist) })
    }
}

/// Hand-coded controller: reads `x̂` and pins whichever allowed mode of the query is nearest.
pub struct NearestModeController<'a> {
    pub dataset: &'a MixtureDataset,
    pub vocab: &'a Vocabulary,
}

impl PromptActor for NearestModeController<'_> {
    fn act(&self, state: &MdpState, _: &mut RandomSource) -> Result<ActorOutput> {
        let mut allowed = Vec::new();
        for &t in state.query.prompt().tokens() {
            match self.vocab.kind(t) {
                Some(TokenKind::Mode(k)) => allowed.push(k),
                Some(TokenKind::Ambiguous(i, j)) => allowed.extend([i, j]),
                _ => {}
            }
        }
        let best = allowed
            .into_iter()
            .min_by(|&a, &b| {
                state.x_hat.dist_sq(&self.dataset.center(a)).total_cmp(&state.x_hat.dist_sq(&self.dataset.center(b)))
            })
            .ok_or_else(|| usage_err("controller needs a query naming at least one mode"))?;
        let action = Prompt::new(vec![self.vocab.mode(best); self.vocab.prompt_len()], self.vocab)?;
        Ok(ActorOutput { action, log_prob: 0.0, dist: None })
    }
}

/// Prompts fixed before sampling, keyed by refinement timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub entries: Vec<PlanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub t: usize,
    pub prompt: Prompt,
    pub log_prob: f64,
}

impl PromptPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn at(&self, t: usize) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.t == t)
    }
}

/// Replays a [`PromptPlan`]; never touches a policy.
pub struct PlanActor<'a>(pub &'a PromptPlan);

impl PromptActor for PlanActor<'_> {
    fn act(&self, state: &MdpState, _: &mut RandomSource) -> Result<ActorOutput> {
        let e = self.0.at(state.t).ok_or_else(|| usage_err(format!("prompt plan has no entry for t={}", state.t)))?;
        Ok(ActorOutput { action: e.prompt.clone(), log_prob: e.log_prob, dist: None })
    }
}

/// Run the policy through `refine` with `x̂` zeroed, before any diffusion step.
pub fn precompute_prompts(
    params: &PolicyParams,
    vocab: &Vocabulary,
    horizon: usize,
    q: &Query,
    refine: &RefinementSchedule,
    rng: &mut RandomSource,
) -> Result<PromptPlan> {
    let mut c = q.prompt().clone();
    let mut entries = Vec::with_capacity(refine.len());
    for &t in refine.steps() {
        let state = MdpState { x_hat: Sample::ORIGIN, prompt: c.clone(), query: q.clone(), t, horizon };
        let dist = params.distribution(&state, Feedback::Masked)?;
        let action = dist.sample(rng, vocab)?;
        let log_prob = dist.log_prob(&action)?;
        entries.push(PlanEntry { t, prompt: action.clone(), log_prob });
        c = action;
    }
    Ok(PromptPlan { entries })
}

/// One policy decision inside an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub state: MdpState,
    pub action: Prompt,
    pub log_prob: f64,
    /// Distribution the action was drawn from; training-only, not serialized.
    #[serde(skip)]
    pub dist: Option<ActionDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub kind: RolloutKind,
    pub query: Query,
    pub events: Vec<RefinementEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Sample>>,
    pub x0: Sample,
    pub final_prompt: Prompt,
    pub reward: RewardValue,
    /// Key of the episode's random source; [`RandomSource::from_recorded_key`] replays it.
    pub seed: u64,
}

/// Frozen pieces shared by every rollout.
#[derive(Clone, Copy)]
pub struct RolloutEnv<'a> {
    pub denoiser: &'a dyn NoisePredictor,
    pub schedule: &'a NoiseSchedule,
    pub sampler: SamplerKind,
    pub reward: &'a RewardFn,
    pub record_trajectory: bool,
}

/// One episode: `x_T ~ N(0, I)`, prompt `c := q`, and for `t = T..1` an optional
/// refinement from `x̂_t` followed by one sampler step under the current prompt.
///
/// Diffusion noise and actor randomness come from separate splits of `rng`, so
/// actors that differ only in their choices see the same noise.
pub fn rollout(
    env: &RolloutEnv<'_>,
    actor: &dyn PromptActor,
    q: &Query,
    refine: &RefinementSchedule,
    rng: &RandomSource,
    kind: RolloutKind,
) -> Result<EpisodeRecord> {
    let horizon = env.schedule.steps();
    if refine.steps()[0] > horizon {
        return Err(config_err(format!("refinement step {} beyond horizon {horizon}", refine.steps()[0])));
    }
    let mut noise = rng.split("noise");
    let mut actor_rng = rng.split("actor");
    let mut x = Sample(noise.normal2());
    let mut c = q.prompt().clone();
    let mut trajectory = vec![x];
    let mut events = Vec::with_capacity(refine.len());
    for t in (1..=horizon).rev() {
        if refine.contains(t) {
            let eps = env.denoiser.predict_noise(x, &c, t);
            let x_hat = estimate_from_eps(x, eps, t, env.schedule);
            let state = MdpState { x_hat, prompt: c.clone(), query: q.clone(), t, horizon };
            let out = actor.act(&state, &mut actor_rng)?;
            c = out.action.clone();
            events.push(RefinementEvent { state, action: out.action, log_prob: out.log_prob, dist: out.dist });
        }
        let z = noise.normal2();
        x = sampler_step(env.sampler, env.denoiser, x, z, &c, t, env.schedule)?;
        trajectory.push(x);
        if !x.is_finite() {
            return Err(Error::Episode { t, message: "non-finite latent".into(), trajectory });
        }
    }
    let reward = env.reward.evaluate(x, q, &c)?;
    Ok(EpisodeRecord {
        kind,
        query: q.clone(),
        events,
        trajectory: env.record_trajectory.then_some(trajectory),
        x0: x,
        final_prompt: c,
        reward,
        seed: rng.key(),
    })
}

/// Precompute a plan from `rng`'s actor stream, then replay it without any policy call.
pub fn rollout_precomputed(
    env: &RolloutEnv<'_>,
    params: &PolicyParams,
    vocab: &Vocabulary,
    q: &Query,
    refine: &RefinementSchedule,
    rng: &RandomSource,
) -> Result<EpisodeRecord> {
    let plan = precompute_prompts(params, vocab, env.schedule.steps(), q, refine, &mut rng.split("actor"))?;
    rollout(env, &PlanActor(&plan), q, refine, rng, RolloutKind::Precomputed)
}

/// Roll out `π_θ` in the given feedback mode.
pub fn policy_rollout(
    env: &RolloutEnv<'_>,
    params: &PolicyParams,
    vocab: &Vocabulary,
    mode: FeedbackMode,
    q: &Query,
    refine: &RefinementSchedule,
    rng: &RandomSource,
) -> Result<EpisodeRecord> {
    match mode {
        FeedbackMode::Precomputed => rollout_precomputed(env, params, vocab, q, refine, rng),
        FeedbackMode::On => rollout(env, &PolicyActor::new(params, vocab, Feedback::Visible), q, refine, rng, RolloutKind::ClosedLoop),
        FeedbackMode::Off => rollout(env, &PolicyActor::new(params, vocab, Feedback::Masked), q, refine, rng, RolloutKind::Blind),
    }
}

/// Member `g`'s random source within a group rooted at `rng`.
pub fn member_rng(rng: &RandomSource, g: usize) -> RandomSource {
    rng.split_indexed("member", g as u64)
}

/// Run one episode per supplied random source. `schedules` holds either one
/// schedule shared by all members or one per member.
pub fn rollout_members(
    env: &RolloutEnv<'_>,
    actor: &dyn PromptActor,
    q: &Query,
    schedules: &[RefinementSchedule],
    rngs: &[RandomSource],
    kind: RolloutKind,
) -> Result<Vec<EpisodeRecord>> {
    if schedules.len() != 1 && schedules.len() != rngs.len() {
        return Err(usage_err(format!("{} schedules for {} members", schedules.len(), rngs.len())));
    }
    let one = |g: usize| {
        let refine = &schedules[if schedules.len() == 1 { 0 } else { g }];
        rollout(env, actor, q, refine, &rngs[g], kind)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<EpisodeRecord>> = {
        use rayon::prelude::*;
        (0..rngs.len()).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<EpisodeRecord>> = (0..rngs.len()).map(one).collect();
    results.into_iter().collect()
}

/// `G` episodes for one query with independent member streams.
pub fn rollout_group(
    env: &RolloutEnv<'_>,
    actor: &dyn PromptActor,
    q: &Query,
    schedules: &[RefinementSchedule],
    group_size: usize,
    rng: &RandomSource,
    kind: RolloutKind,
) -> Result<Vec<EpisodeRecord>> {
    if group_size < 2 {
        return Err(config_err(format!("group size must be at least 2, got {group_size}")));
    }
    let rngs: Vec<RandomSource> = (0..group_size).map(|g| member_rng(rng, g)).collect();
    rollout_members(env, actor, q, schedules, &rngs, kind)
}

pub fn write_jsonl<W: Write>(records: &[EpisodeRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
