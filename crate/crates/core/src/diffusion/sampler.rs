use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::error::{usage_err, Result};
use crate::numerics::RandomSource;
use crate::prompt::Prompt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    /// `eta = 0` is deterministic; `eta = 1` matches the DDPM posterior variance.
    Ddim { eta: f64 },
}

impl Default for SamplerKind {
    fn default() -> Self {
        SamplerKind::Ddpm
    }
}

/// Closed-form `x_t = √ᾱ_t x₀ + √(1−ᾱ_t) ε`.
pub fn forward_noise(x0: Sample, t: usize, eps: [f64; 2], schedule: &NoiseSchedule) -> Result<Sample> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    Ok(ab.sqrt() * x0 + (1.0 - ab).sqrt() * Sample(eps))
}

/// Mean of the DDPM reverse step given a noise prediction.
pub fn ddpm_mean(x_t: Sample, eps_hat: [f64; 2], t: usize, schedule: &NoiseSchedule) -> Sample {
    let a = schedule.alpha(t);
    let coef = (1.0 - a) / (1.0 - schedule.alpha_bar(t)).sqrt();
    (1.0 / a.sqrt()) * (x_t - coef * Sample(eps_hat))
}

/// `x_{t−1} = (1/√α_t)(x_t − ((1−α_t)/√(1−ᾱ_t)) ε̂) + σ_t z_t`.
pub fn ddpm_step<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: Sample,
    z: [f64; 2],
    prompt: &Prompt,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Sample> {
    schedule.check_t(t)?;
    let eps = model.predict_noise(x_t, prompt, t);
    Ok(ddpm_mean(x_t, eps, t, schedule) + schedule.sigma(t) * Sample(z))
}

/// DDIM update towards `t − 1` through the predicted clean sample.
pub fn ddim_step<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: Sample,
    z: [f64; 2],
    prompt: &Prompt,
    t: usize,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Sample> {
    schedule.check_t(t)?;
    if !(eta >= 0.0) {
        return Err(usage_err(format!("DDIM eta must be non-negative, got {eta}")));
    }
    let eps = model.predict_noise(x_t, prompt, t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let x0_hat = (1.0 / ab.sqrt()) * (x_t - (1.0 - ab).sqrt() * Sample(eps));
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).max(0.0).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut next = ab_prev.sqrt() * x0_hat + dir * Sample(eps);
    if sigma > 0.0 {
        next = next + sigma * Sample(z);
    }
    Ok(next)
}

/// One-shot estimate `x̂ = (x_t − √(1−ᾱ_t) ε̂(x_t, c, t)) / √ᾱ_t`. At `t = 0` returns `x_t`.
pub fn denoised_estimate<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: Sample,
    prompt: &Prompt,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Sample> {
    if t == 0 {
        return Ok(x_t);
    }
    schedule.check_t(t)?;
    let eps = model.predict_noise(x_t, prompt, t);
    Ok(estimate_from_eps(x_t, eps, t, schedule))
}

pub fn estimate_from_eps(x_t: Sample, eps: [f64; 2], t: usize, schedule: &NoiseSchedule) -> Sample {
    let ab = schedule.alpha_bar(t);
    (1.0 / ab.sqrt()) * (x_t - (1.0 - ab).sqrt() * Sample(eps))
}

pub fn sampler_step<M: NoisePredictor + ?Sized>(
    kind: SamplerKind,
    model: &M,
    x_t: Sample,
    z: [f64; 2],
    prompt: &Prompt,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Sample> {
    match kind {
        SamplerKind::Ddpm => ddpm_step(model, x_t, z, prompt, t, schedule),
        SamplerKind::Ddim { eta } => ddim_step(model, x_t, z, prompt, t, schedule, eta),
    }
}

/// Full reverse chain from `x_T ~ N(0, I)` under a fixed prompt.
pub fn sample_with_prompt<M: NoisePredictor + ?Sized>(
    model: &M,
    prompt: &Prompt,
    schedule: &NoiseSchedule,
    kind: SamplerKind,
    rng: &mut RandomSource,
) -> Result<Sample> {
    let mut x = Sample(rng.normal2());
    for t in (1..=schedule.steps()).rev() {
        let z = rng.normal2();
        x = sampler_step(kind, model, x, z, prompt, t, schedule)?;
    }
    Ok(x)
}
