//! Toy conditional DDPM on 2D data.

mod dataset;
mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use dataset::{MixtureDataset, MixtureSpec, Sample};
pub use denoiser::{
    epsilon_loss_and_grad, time_embedding, time_embedding_into, DenoiserArch, DenoiserForward, DenoiserGrads,
    DenoiserParams, MixtureOracle, NoisePredictor, NoisedExample,
};
pub use sampler::{
    ddim_step, ddpm_mean, ddpm_step, denoised_estimate, estimate_from_eps, forward_noise, sample_with_prompt,
    sampler_step, SamplerKind,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind, ScheduleSpec};
pub use train::{sample_batch, train_denoiser, DenoiserTrainConfig, LossPoint, TrainedDenoiser};
