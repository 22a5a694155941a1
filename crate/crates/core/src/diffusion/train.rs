use serde::{Deserialize, Serialize};

use super::dataset::MixtureDataset;
use super::denoiser::{epsilon_loss_accumulate, DenoiserArch, DenoiserGrads, DenoiserParams, NoisedExample};
use super::schedule::NoiseSchedule;
use crate::error::{config_err, Error, Result};
use crate::numerics::{AdamState, ParamBlocks, RandomSource};
use crate::prompt::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay).
    pub final_lr_fraction: f64,
    /// Loss curve resolution: one point per `log_every` steps (mean over the window).
    pub log_every: usize,
    pub arch: DenoiserArch,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            steps: 30_000,
            batch_size: 128,
            lr: 2e-3,
            final_lr_fraction: 0.05,
            log_every: 100,
            arch: DenoiserArch::default(),
        }
    }
}

impl DenoiserTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(config_err("denoiser batch size and log interval must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(config_err("denoiser learning rate must be positive, final fraction in [0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr;
        }
        let progress = step as f64 / (self.steps - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub params: DenoiserParams,
    pub loss_curve: Vec<LossPoint>,
    /// Loss of the initialization on the first batch.
    pub initial_loss: f64,
}

/// Draw one ε-matching minibatch: prompt and clean sample from the dataset, uniform `t`, fresh noise.
pub fn sample_batch(
    dataset: &MixtureDataset,
    vocab: &Vocabulary,
    schedule: &NoiseSchedule,
    size: usize,
    rng: &mut RandomSource,
) -> Vec<NoisedExample> {
    (0..size)
        .map(|_| {
            let (prompt, x0) = dataset.sample_pair(vocab, rng);
            let t = 1 + rng.below(schedule.steps());
            NoisedExample { x0, prompt, t, eps: rng.normal2() }
        })
        .collect()
}

/// Fit ε̂_φ with Adam on fresh minibatches. Zero steps return the initialization.
pub fn train_denoiser(
    dataset: &MixtureDataset,
    vocab: &Vocabulary,
    schedule: &NoiseSchedule,
    config: &DenoiserTrainConfig,
    rng: &RandomSource,
) -> Result<TrainedDenoiser> {
    config.validate()?;
    if vocab.num_modes() != dataset.spec().modes {
        return Err(config_err(format!(
            "vocabulary has {} mode tokens but the dataset has {} modes",
            vocab.num_modes(),
            dataset.spec().modes
        )));
    }
    let mut init_rng = rng.split("denoiser-init");
    let mut data_rng = rng.split("denoiser-data");
    let mut params = DenoiserParams::init(config.arch, vocab, schedule.steps(), &mut init_rng)?;
    let mut adam = AdamState::new(&params, config.lr);
    let mut grads = DenoiserGrads::zeros_like(&params);

    let mut curve = Vec::new();
    let mut window = 0.0;
    let mut window_len = 0;
    let mut initial_loss = f64::NAN;
    for step in 0..config.steps {
        let batch = sample_batch(dataset, vocab, schedule, config.batch_size, &mut data_rng);
        grads.net.fill_zero();
        grads.token_embedding.fill(0.0);
        let loss = epsilon_loss_accumulate(&params, &batch, schedule, &mut grads)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Training { step, message: format!("non-finite loss {loss}") });
        }
        if step == 0 {
            initial_loss = loss;
        }
        adam.lr = config.lr_at(step);
        adam.step(&mut params, &grads)?;
        window += loss;
        window_len += 1;
        if window_len == config.log_every || step + 1 == config.steps {
            curve.push(LossPoint { step: step + 1, loss: window / window_len as f64 });
            window = 0.0;
            window_len = 0;
        }
    }
    if !params.is_finite() {
        return Err(Error::Training { step: config.steps, message: "non-finite parameters".into() });
    }
    Ok(TrainedDenoiser { params, loss_curve: curve, initial_loss })
}
