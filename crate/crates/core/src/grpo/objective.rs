use serde::{Deserialize, Serialize};

use crate::env::EpisodeRecord;
use crate::error::{config_err, usage_err, Result};
use crate::policy::{add_logprob_logit_grad, ActionDistribution, Feedback, PolicyGrads, PolicyParams};

/// Which way the KL penalty is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL[π_old ‖ π_θ]`.
    #[default]
    OldNew,
    /// `KL[π_θ ‖ π_old]`.
    NewOld,
}

/// Group-normalized advantages `(r_i − mean) / std` with the population std.
/// Groups whose std is below `std_eps` get all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_eps: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(config_err(format!("a group needs at least 2 rewards, got {}", rewards.len())));
    }
    // Offsets from the first reward are unchanged by any exactly representable shift,
    // so the result is bit-identical under such shifts.
    let d: Vec<f64> = rewards.iter().map(|r| r - rewards[0]).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= std_eps) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(d.iter().map(|x| (x - mean) / std).collect())
}

fn clip(rho: f64, eps: f64) -> f64 {
    rho.clamp(1.0 - eps, 1.0 + eps)
}

/// Per-token `min(ρ Â, clip(ρ, 1 − ε, 1 + ε) Â)` with `ρ = exp(new − old)`.
pub fn token_surrogate(new_logprobs: &[f64], old_logprobs: &[f64], advantage: f64, clip_eps: f64) -> Result<Vec<f64>> {
    if new_logprobs.len() != old_logprobs.len() {
        return Err(usage_err(format!(
            "surrogate needs aligned tokens, got {} new and {} old",
            new_logprobs.len(),
            old_logprobs.len()
        )));
    }
    Ok(new_logprobs
        .iter()
        .zip(old_logprobs)
        .map(|(n, o)| {
            let rho = (n - o).exp();
            (rho * advantage).min(clip(rho, clip_eps) * advantage)
        })
        .collect())
}

/// Surrogate term and its derivative w.r.t. the new log-probability.
fn surrogate_term(new_lp: f64, old_lp: f64, adv: f64, eps: f64) -> (f64, f64, bool) {
    let rho = (new_lp - old_lp).exp();
    let unclipped = rho * adv;
    let clipped = clip(rho, eps) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped, false)
    } else {
        (clipped, 0.0, true)
    }
}

fn check_shapes(a: &ActionDistribution, b: &ActionDistribution) -> Result<()> {
    if a.num_slots() != b.num_slots() || a.log_probs.iter().zip(&b.log_probs).any(|(x, y)| x.len() != y.len()) {
        return Err(usage_err("KL between distributions of different shapes"));
    }
    Ok(())
}

fn slot_kl(p_lp: &[f64], q_lp: &[f64]) -> f64 {
    p_lp.iter()
        .zip(q_lp)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum()
}

/// Exact `KL[old ‖ new]`, summed over slots.
pub fn kl_penalty(old: &ActionDistribution, new: &ActionDistribution) -> Result<f64> {
    kl_penalty_directed(old, new, KlDirection::OldNew)
}

pub fn kl_penalty_directed(old: &ActionDistribution, new: &ActionDistribution, dir: KlDirection) -> Result<f64> {
    check_shapes(old, new)?;
    Ok(old
        .log_probs
        .iter()
        .zip(&new.log_probs)
        .map(|(o, n)| match dir {
            KlDirection::OldNew => slot_kl(o, n),
            KlDirection::NewOld => slot_kl(n, o),
        })
        .sum::<f64>()
        .max(0.0))
}

/// Add `scale · ∂KL/∂z_new` for one slot into `out`.
fn add_kl_logit_grad(old: &[f64], new: &[f64], dir: KlDirection, scale: f64, out: &mut [f64]) {
    match dir {
        KlDirection::OldNew => {
            for ((g, o), n) in out.iter_mut().zip(old).zip(new) {
                *g += scale * (n.exp() - o.exp());
            }
        }
        KlDirection::NewOld => {
            let kl = slot_kl(new, old);
            for ((g, o), n) in out.iter_mut().zip(old).zip(new) {
                *g += scale * n.exp() * (n - o - kl);
            }
        }
    }
}

/// The GRPO hyperparameters that shape the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub kl_direction: KlDirection,
}

/// `G` episodes for one query with frozen rollout-time quantities.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub episodes: Vec<EpisodeRecord>,
    pub advantages: Vec<f64>,
    /// `old[i][e]`: distribution at event `e` of episode `i` when the action was drawn.
    pub old: Vec<Vec<ActionDistribution>>,
    pub feedback: Feedback,
}

impl GroupBatch {
    pub fn new(episodes: Vec<EpisodeRecord>, feedback: Feedback, std_eps: f64) -> Result<Self> {
        let rewards: Vec<f64> = episodes.iter().map(|e| e.reward.total).collect();
        let advantages = group_advantages(&rewards, std_eps)?;
        let old = episodes
            .iter()
            .map(|ep| {
                ep.events
                    .iter()
                    .map(|ev| ev.dist.clone().ok_or_else(|| usage_err("episode event carries no policy distribution")))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { episodes, advantages, old, feedback })
    }

    pub fn num_events(&self) -> usize {
        self.old.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// `−mean_tokens(surrogate) + β · mean_events(KL)` over all groups, with its gradient.
pub fn grpo_loss_and_grad(
    params: &PolicyParams,
    batches: &[GroupBatch],
    config: &ObjectiveConfig,
) -> Result<(LossBreakdown, PolicyGrads)> {
    let slots = params.prompt_len;
    let v = params.vocab_size();
    let n_events: usize = batches.iter().map(GroupBatch::num_events).sum();
    if n_events == 0 {
        return Err(usage_err("GRPO loss needs at least one refinement event"));
    }
    let n_tokens = (n_events * slots) as f64;
    let n_events = n_events as f64;
    let mut grads = PolicyGrads::zeros_like(params);
    let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    let mut dz = vec![0.0; slots * v];
    for batch in batches {
        for ((ep, adv), olds) in batch.episodes.iter().zip(&batch.advantages).zip(&batch.old) {
            for (ev, old) in ep.events.iter().zip(olds) {
                let fwd = params.forward(&ev.state, batch.feedback)?;
                let new_lp = fwd.dist.slot_log_probs(&ev.action)?;
                let old_lp = old.slot_log_probs(&ev.action)?;
                dz.iter_mut().for_each(|g| *g = 0.0);
                for s in 0..slots {
                    let (term, d_dlogp, was_clipped) = surrogate_term(new_lp[s], old_lp[s], *adv, config.clip_eps);
                    surrogate += term;
                    clipped += was_clipped as usize;
                    if d_dlogp != 0.0 {
                        add_logprob_logit_grad(&fwd.dist, &ev.action, s, -d_dlogp / n_tokens, &mut dz);
                    }
                }
                if config.kl_coef > 0.0 {
                    check_shapes(old, &fwd.dist)?;
                    kl += kl_penalty_directed(old, &fwd.dist, config.kl_direction)?;
                    for s in 0..slots {
                        add_kl_logit_grad(
                            &old.log_probs[s],
                            &fwd.dist.log_probs[s],
                            config.kl_direction,
                            config.kl_coef / n_events,
                            &mut dz[s * v..(s + 1) * v],
                        );
                    }
                }
                params.backward_accumulate(&fwd, &ev.state, &dz, &mut grads)?;
            }
        }
    }
    let surrogate = surrogate / n_tokens;
    let kl = kl / n_events;
    Ok((
        LossBreakdown {
            loss: -surrogate + config.kl_coef * kl,
            surrogate,
            kl,
            clip_fraction: clipped as f64 / n_tokens,
        },
        grads,
    ))
}

/// Mean over events of `KL[old ‖ current]` after an update.
pub fn mean_event_kl(params: &PolicyParams, batches: &[GroupBatch], dir: KlDirection) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for batch in batches {
        for (ep, olds) in batch.episodes.iter().zip(&batch.old) {
            for (ev, old) in ep.events.iter().zip(olds) {
                let new = params.distribution(&ev.state, batch.feedback)?;
                total += kl_penalty_directed(old, &new, dir)?;
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
