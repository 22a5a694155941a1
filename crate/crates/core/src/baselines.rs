//! Reference points for the refinement policy: no refinement, one blind
//! refinement, and reward fine-tuning of the denoiser weights themselves.

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ddpm_mean, DenoiserGrads, DenoiserParams, NoiseSchedule, Sample,
};
use crate::env::{
    inference_schedule, member_rng, rollout, EpisodeRecord, IdentityActor, PolicyActor, RolloutEnv, RolloutKind,
};
use crate::error::{config_err, Error, Result};
use crate::grpo::group_advantages;
use crate::numerics::{AdamState, ParamBlocks, RandomSource};
use crate::policy::{Feedback, PolicyParams};
use crate::prompt::{Query, Vocabulary};
use crate::rewards::RewardFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Identity,
    FeedForward,
    DiffusionRl,
}

/// Sampling with the prompt fixed to `q`; no policy is consulted.
pub fn identity_rollout(env: &RolloutEnv<'_>, q: &Query, rng: &RandomSource) -> Result<EpisodeRecord> {
    let refine = inference_schedule(env.schedule.steps(), 1)?;
    rollout(env, &IdentityActor, q, &refine, rng, RolloutKind::Identity)
}

/// One policy call at `t = T` with `x̂` masked; its prompt conditions every step.
pub fn feedforward_rollout(
    env: &RolloutEnv<'_>,
    params: &PolicyParams,
    vocab: &Vocabulary,
    q: &Query,
    rng: &RandomSource,
) -> Result<EpisodeRecord> {
    let refine = inference_schedule(env.schedule.steps(), 1)?;
    rollout(env, &PolicyActor::new(params, vocab, Feedback::Masked), q, &refine, rng, RolloutKind::FeedForward)
}

/// Log-density of a 2D isotropic Gaussian step, `−ln(2πσ²) − ‖x − μ‖² / (2σ²)`.
pub fn gaussian_step_logprob(x: Sample, mean: Sample, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    -(2.0 * std::f64::consts::PI * s2).ln() - x.dist_sq(&mean) / (2.0 * s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionRlConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    /// Weight of the exact per-step Gaussian `KL[old ‖ new]`.
    pub kl_coef: f64,
    pub lr: f64,
    pub inner_iterations: usize,
    pub std_eps: f64,
    pub groups_per_update: usize,
    pub updates: usize,
}

impl Default for DiffusionRlConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.0,
            lr: 3e-4,
            inner_iterations: 1,
            std_eps: 1e-8,
            groups_per_update: 4,
            updates: 100,
        }
    }
}

/// One stochastic transition `x_t → x_{t−1}` under the sampling weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionStep {
    pub t: usize,
    pub x_t: Sample,
    pub x_prev: Sample,
    pub old_mean: Sample,
    pub old_logprob: f64,
}

/// A denoising trajectory. Only transitions with `σ_t > 0` are kept as steps.
#[derive(Debug, Clone)]
pub struct DiffusionEpisode {
    pub steps: Vec<DiffusionStep>,
    pub x0: Sample,
    pub reward: f64,
}

/// Sample one DDPM trajectory and record transition log-densities.
pub fn sample_diffusion_episode(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    reward: &RewardFn,
    q: &Query,
    rng: &RandomSource,
) -> Result<DiffusionEpisode> {
    let horizon = schedule.steps();
    let mut noise = rng.split("noise");
    let mut x = Sample(noise.normal2());
    let mut trajectory = vec![x];
    let mut steps = Vec::with_capacity(horizon);
    for t in (1..=horizon).rev() {
        let z = noise.normal2();
        let eps = params.try_predict(x, q.prompt(), t)?;
        let mean = ddpm_mean(x, eps, t, schedule);
        let sigma = schedule.sigma(t);
        let next = mean + sigma * Sample(z);
        if sigma > 0.0 {
            steps.push(DiffusionStep {
                t,
                x_t: x,
                x_prev: next,
                old_mean: mean,
                old_logprob: gaussian_step_logprob(next, mean, sigma),
            });
        }
        x = next;
        trajectory.push(x);
        if !x.is_finite() {
            return Err(Error::Episode { t, message: "non-finite latent".into(), trajectory });
        }
    }
    let r = reward.evaluate(x, q, q.prompt())?.total;
    Ok(DiffusionEpisode { steps, x0: x, reward: r })
}

/// A group of trajectories with their normalized advantages.
#[derive(Debug, Clone)]
pub struct DiffusionGroup {
    pub episodes: Vec<DiffusionEpisode>,
    pub advantages: Vec<f64>,
}

/// Clipped-surrogate loss over all stochastic transitions plus the optional
/// Gaussian KL term, with gradient w.r.t. the denoiser weights.
pub fn diffusion_rl_loss_and_grad(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    q: &Query,
    groups: &[DiffusionGroup],
    config: &DiffusionRlConfig,
) -> Result<(f64, DenoiserGrads)> {
    let mut grads = DenoiserGrads::zeros_like(params);
    let n_tokens: usize = groups.iter().flat_map(|g| &g.episodes).map(|e| e.steps.len()).sum();
    if n_tokens == 0 {
        return Ok((0.0, grads));
    }
    let n = n_tokens as f64;
    let mut loss = 0.0;
    for group in groups {
        for (ep, &adv) in group.episodes.iter().zip(&group.advantages) {
            for step in &ep.steps {
                let t = step.t;
                let fwd = params.forward(step.x_t, q.prompt(), t)?;
                let mean = ddpm_mean(step.x_t, fwd.eps, t, schedule);
                let sigma = schedule.sigma(t);
                let s2 = sigma * sigma;
                let rho = (gaussian_step_logprob(step.x_prev, mean, sigma) - step.old_logprob).exp();
                let unclipped = rho * adv;
                let clipped = rho.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv;
                let mut dmean = [0.0; 2];
                if unclipped <= clipped {
                    loss -= unclipped / n;
                    // ∂ log p / ∂μ = (x − μ) / σ²
                    for d in 0..2 {
                        dmean[d] -= unclipped / n * (step.x_prev.0[d] - mean.0[d]) / s2;
                    }
                } else {
                    loss -= clipped / n;
                }
                if config.kl_coef > 0.0 {
                    // equal-variance Gaussians: KL = ‖μ − μ_old‖² / (2σ²)
                    loss += config.kl_coef / n * mean.dist_sq(&step.old_mean) / (2.0 * s2);
                    for d in 0..2 {
                        dmean[d] += config.kl_coef / n * (mean.0[d] - step.old_mean.0[d]) / s2;
                    }
                }
                // dμ/dε̂ = −(1 − α_t) / (√α_t √(1 − ᾱ_t))
                let a = schedule.alpha(t);
                let dmean_deps = -(1.0 - a) / (a.sqrt() * (1.0 - schedule.alpha_bar(t)).sqrt());
                let eps_grad = [dmean[0] * dmean_deps, dmean[1] * dmean_deps];
                if eps_grad != [0.0, 0.0] {
                    params.backward_accumulate(&fwd, q.prompt(), eps_grad, &mut grads)?;
                }
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiffusionRlMetrics {
    pub update: usize,
    pub mean_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    pub loss: f64,
}

fn collect_diffusion_groups(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    reward: &RewardFn,
    q: &Query,
    config: &DiffusionRlConfig,
    rng: &RandomSource,
) -> Result<Vec<DiffusionGroup>> {
    let mut groups = Vec::with_capacity(config.groups_per_update);
    for b in 0..config.groups_per_update {
        let grng = rng.split_indexed("group", b as u64);
        let one = |g: usize| sample_diffusion_episode(params, schedule, reward, q, &member_rng(&grng, g));
        #[cfg(feature = "parallel")]
        let results: Vec<Result<DiffusionEpisode>> = {
            use rayon::prelude::*;
            (0..config.group_size).into_par_iter().map(one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<DiffusionEpisode>> = (0..config.group_size).map(one).collect();
        let episodes = match results.into_iter().collect::<Result<Vec<_>>>() {
            Ok(e) => e,
            Err(Error::Episode { .. }) => continue,
            Err(e) => return Err(e),
        };
        let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        let advantages = group_advantages(&rewards, config.std_eps)?;
        groups.push(DiffusionGroup { episodes, advantages });
    }
    Ok(groups)
}

/// Reward fine-tuning of a copy of the denoiser: each stochastic DDPM transition
/// is an action whose log-probability is its Gaussian density, optimized with
/// the same group-normalized clipped objective as the prompt policy.
pub fn diffusion_rl_finetune(
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    reward: &RewardFn,
    q: &Query,
    config: &DiffusionRlConfig,
    rng: &RandomSource,
) -> Result<(DenoiserParams, Vec<DiffusionRlMetrics>)> {
    if config.group_size < 2 || config.groups_per_update == 0 || config.inner_iterations == 0 {
        return Err(config_err("diffusion RL needs group size >= 2 and positive groups and iterations"));
    }
    if !(config.clip_eps > 0.0 && config.clip_eps < 1.0) || !(config.lr > 0.0) || !(config.kl_coef >= 0.0) {
        return Err(config_err("diffusion RL needs clip in (0, 1), positive lr and non-negative KL weight"));
    }
    let mut params = denoiser.clone();
    let mut adam = AdamState::new(&params, config.lr);
    let mut metrics = Vec::with_capacity(config.updates);
    for update in 0..config.updates {
        let urng = rng.split_indexed("update", update as u64);
        let groups = collect_diffusion_groups(&params, schedule, reward, q, config, &urng)?;
        let mut loss = 0.0;
        for _ in 0..config.inner_iterations {
            let (l, grads) = diffusion_rl_loss_and_grad(&params, schedule, q, &groups, config)?;
            if !l.is_finite() || !grads.is_finite() {
                return Err(Error::Training { step: update, message: format!("non-finite diffusion RL loss {l}") });
            }
            adam.step(&mut params, &grads)?;
            loss = l;
        }
        let rewards: Vec<f64> = groups.iter().flat_map(|g| g.episodes.iter().map(|e| e.reward)).collect();
        let n = rewards.len().max(1) as f64;
        metrics.push(DiffusionRlMetrics {
            update,
            mean_reward: rewards.iter().sum::<f64>() / n,
            min_reward: rewards.iter().copied().fold(f64::INFINITY, f64::min),
            max_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            loss,
        });
    }
    Ok((params, metrics))
}
