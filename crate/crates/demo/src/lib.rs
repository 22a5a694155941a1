//! Browser demo: noise schedules, noisy latents with their one-shot estimates,
//! and fixed-prompt vs closed-loop sampling paths.
//!
//! The page uses the exact mixture denoiser, so nothing has to be trained or
//! downloaded. The closed-loop path is driven by the nearest-mode controller.

use wasm_bindgen::prelude::*;

use promptloop_core::diffusion::{
    denoised_estimate, forward_noise, make_schedule, MixtureDataset, MixtureOracle, MixtureSpec, NoiseSchedule,
    SamplerKind, ScheduleKind, ScheduleSpec,
};
use promptloop_core::env::{inference_schedule, rollout, IdentityActor, NearestModeController, RolloutEnv, RolloutKind};
use promptloop_core::numerics::RandomSource;
use promptloop_core::prompt::{Prompt, Vocabulary};
use promptloop_core::rewards::{RewardFn, RewardSpec};

/// Per-step schedule values for `t = 1..=T`, laid out as
/// `[β_1..β_T, ᾱ_1..ᾱ_T, σ_1..σ_T]`.
pub fn schedule_table(cosine: bool, steps: usize, beta_min: f64, beta_max: f64) -> Result<Vec<f64>, String> {
    let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
    let s = make_schedule(steps, beta_min, beta_max, kind).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(3 * steps);
    out.extend((1..=steps).map(|t| s.beta(t)));
    out.extend((1..=steps).map(|t| s.alpha_bar(t)));
    out.extend((1..=steps).map(|t| s.sigma(t)));
    Ok(out)
}

fn desk() -> (MixtureDataset, Vocabulary, NoiseSchedule) {
    let dataset = MixtureDataset::new(MixtureSpec::default()).expect("default mixture");
    let schedule = ScheduleSpec::default().build().expect("default schedule");
    (dataset, Vocabulary::desk_default(), schedule)
}

/// Mode centers as `[x0, y0, x1, y1, ...]`.
pub fn centers() -> Vec<f64> {
    let (dataset, _, _) = desk();
    dataset.centers().iter().flat_map(|c| c.0).collect()
}

/// Names of the single-token queries the page offers.
pub fn queries() -> Vec<String> {
    let (_, vocab, _) = desk();
    vocab.mode_queries().iter().chain(&vocab.ambiguous_queries()).map(|q| vocab.name(q.prompt().tokens()[0])).collect()
}

/// `n` draws of `x_t` from mode `mode`, each followed by the exact `x̂_t`
/// under the full-strength prompt: `[xt_x, xt_y, xhat_x, xhat_y] × n`.
pub fn noise_cloud_points(mode: usize, t: usize, n: usize, seed: u32) -> Result<Vec<f64>, String> {
    let (dataset, vocab, schedule) = desk();
    if mode >= dataset.centers().len() {
        return Err(format!("mode must be below {}", dataset.centers().len()));
    }
    let prompt = Prompt::new(vec![vocab.mode(mode); vocab.prompt_len()], &vocab).map_err(|e| e.to_string())?;
    let oracle = MixtureOracle { dataset: &dataset, vocab: &vocab, schedule: &schedule };
    let mut rng = RandomSource::new(seed as u64);
    let mut out = Vec::with_capacity(4 * n);
    for _ in 0..n {
        let x0 = dataset.sample_from_mode(mode, &mut rng);
        let xt = forward_noise(x0, t, rng.normal2(), &schedule).map_err(|e| e.to_string())?;
        let xhat = denoised_estimate(&oracle, xt, &prompt, t, &schedule).map_err(|e| e.to_string())?;
        out.extend([xt.x(), xt.y(), xhat.x(), xhat.y()]);
    }
    Ok(out)
}

/// Two sampling paths from the same noise: prompt fixed to the query, and
/// prompt refined by the controller at `refine_steps` evenly spaced times.
#[wasm_bindgen]
pub struct Comparison {
    fixed: Vec<f64>,
    closed: Vec<f64>,
    fixed_reward: f64,
    closed_reward: f64,
    closed_prompt: String,
    refine_times: Vec<u32>,
}

#[wasm_bindgen]
impl Comparison {
    /// Fixed-prompt path `x_T .. x_0` as `[x, y, ...]`.
    pub fn fixed(&self) -> Vec<f64> {
        self.fixed.clone()
    }

    pub fn closed(&self) -> Vec<f64> {
        self.closed.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn fixed_reward(&self) -> f64 {
        self.fixed_reward
    }

    #[wasm_bindgen(getter)]
    pub fn closed_reward(&self) -> f64 {
        self.closed_reward
    }

    #[wasm_bindgen(getter)]
    pub fn closed_prompt(&self) -> String {
        self.closed_prompt.clone()
    }

    pub fn refine_times(&self) -> Vec<u32> {
        self.refine_times.clone()
    }
}

pub fn compare_paths(query: &str, refine_steps: usize, seed: u32, nearest: bool) -> Result<Comparison, String> {
    let (dataset, vocab, schedule) = desk();
    let token = vocab.token_by_name(query).ok_or_else(|| format!("unknown token `{query}`"))?;
    let q = vocab.single_token_query(token);
    let spec = if nearest { RewardSpec::AmbiguousNearest } else { RewardSpec::ModeMatch };
    let reward = RewardFn::new(spec, 1.0, dataset.clone(), vocab.clone()).map_err(|e| e.to_string())?;
    if !reward.accepts(&q) {
        return Err(format!("{} is not defined for `{query}`", spec.name()));
    }
    let oracle = MixtureOracle { dataset: &dataset, vocab: &vocab, schedule: &schedule };
    let env = RolloutEnv { denoiser: &oracle, schedule: &schedule, sampler: SamplerKind::Ddpm, reward: &reward, record_trajectory: true };
    let rng = RandomSource::new(seed as u64);
    let err = |e: promptloop_core::Error| e.to_string();
    let once = inference_schedule(schedule.steps(), 1).map_err(err)?;
    let fixed = rollout(&env, &IdentityActor, &q, &once, &rng, RolloutKind::Identity).map_err(err)?;
    let refine = inference_schedule(schedule.steps(), refine_steps).map_err(err)?;
    let controller = NearestModeController { dataset: &dataset, vocab: &vocab };
    let closed = rollout(&env, &controller, &q, &refine, &rng, RolloutKind::Controller).map_err(err)?;
    let flat = |ep: &promptloop_core::env::EpisodeRecord| -> Vec<f64> {
        ep.trajectory.as_deref().unwrap_or_default().iter().flat_map(|s| s.0).collect()
    };
    Ok(Comparison {
        fixed: flat(&fixed),
        closed: flat(&closed),
        fixed_reward: fixed.reward.total,
        closed_reward: closed.reward.total,
        closed_prompt: vocab.render(&closed.final_prompt),
        refine_times: refine.steps().iter().map(|&t| t as u32).collect(),
    })
}

// ------------------------------------------------------------ JS bindings

#[wasm_bindgen(js_name = scheduleTable)]
pub fn schedule_table_js(cosine: bool, steps: usize, beta_min: f64, beta_max: f64) -> Result<Vec<f64>, JsError> {
    schedule_table(cosine, steps, beta_min, beta_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = modeCenters)]
pub fn centers_js() -> Vec<f64> {
    centers()
}

#[wasm_bindgen(js_name = queryNames)]
pub fn queries_js() -> Vec<String> {
    queries()
}

#[wasm_bindgen(js_name = noiseCloud)]
pub fn noise_cloud_js(mode: usize, t: usize, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    noise_cloud_points(mode, t, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = comparePaths)]
pub fn compare_paths_js(query: &str, refine_steps: usize, seed: u32, nearest: bool) -> Result<Comparison, JsError> {
    compare_paths(query, refine_steps, seed, nearest).map_err(|e| JsError::new(&e))
}
