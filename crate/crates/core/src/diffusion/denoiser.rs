use serde::{Deserialize, Serialize};

use super::dataset::{MixtureDataset, Sample};
use super::schedule::NoiseSchedule;
use crate::error::{config_err, usage_err, Result};
use crate::numerics::{Activation, ForwardCache, Matrix, MlpGrads, MlpParams, ParamBlocks, RandomSource};
use crate::prompt::{embed_prompt_backward, embed_prompt_into, Prompt, Vocabulary};

/// Predicts the noise `ε` that produced `x_t` from a clean sample.
pub trait NoisePredictor: Sync {
    fn predict_noise(&self, x: Sample, prompt: &Prompt, t: usize) -> [f64; 2];
}

impl<F> NoisePredictor for F
where
    F: Fn(Sample, &Prompt, usize) -> [f64; 2] + Sync,
{
    fn predict_noise(&self, x: Sample, prompt: &Prompt, t: usize) -> [f64; 2] {
        self(x, prompt, t)
    }
}

/// Sinusoidal embedding of `t / horizon` with frequencies geometric in `[1, 100]`.
pub fn time_embedding(t: usize, horizon: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    time_embedding_into(t, horizon, &mut out);
    out
}

pub fn time_embedding_into(t: usize, horizon: usize, out: &mut [f64]) {
    let half = out.len() / 2;
    let s = t as f64 / horizon as f64;
    for i in 0..half {
        let freq = if half > 1 { 100f64.powf(i as f64 / (half - 1) as f64) } else { 1.0 };
        out[2 * i] = (freq * s).sin();
        out[2 * i + 1] = (freq * s).cos();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserArch {
    pub hidden: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self { hidden: 64, layers: 2, embed_dim: 8, time_dim: 16 }
    }
}

/// The noise predictor `ε̂_φ(x_t, t, c)`: a tanh MLP over `[x_t, mean token embedding, time embedding]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub net: MlpParams,
    pub token_embedding: Matrix,
    pub time_dim: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrads {
    pub net: MlpGrads,
    pub token_embedding: Matrix,
}

impl DenoiserGrads {
    pub fn zeros_like(p: &DenoiserParams) -> Self {
        let (r, c) = p.token_embedding.shape();
        Self { net: MlpGrads::zeros_like(&p.net), token_embedding: Matrix::zeros(r, c).expect("positive") }
    }
}

impl ParamBlocks for DenoiserParams {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.net.blocks();
        b.push(self.token_embedding.as_slice());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.net.blocks_mut();
        b.push(self.token_embedding.as_mut_slice());
        b
    }
}

impl ParamBlocks for DenoiserGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.net.blocks();
        b.push(self.token_embedding.as_slice());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.net.blocks_mut();
        b.push(self.token_embedding.as_mut_slice());
        b
    }
}

/// Cached forward pass of the denoiser, used to backpropagate into φ.
pub struct DenoiserForward {
    pub eps: [f64; 2],
    cache: ForwardCache,
}

impl DenoiserParams {
    pub fn init(arch: DenoiserArch, vocab: &Vocabulary, horizon: usize, rng: &mut RandomSource) -> Result<Self> {
        if arch.layers == 0 || arch.hidden == 0 || arch.embed_dim == 0 {
            return Err(config_err("denoiser needs positive hidden width, depth and embedding size"));
        }
        if arch.time_dim == 0 || arch.time_dim % 2 != 0 {
            return Err(config_err("time embedding dimension must be positive and even"));
        }
        let input = 2 + arch.embed_dim + arch.time_dim;
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(arch.hidden).take(arch.layers));
        widths.push(2);
        let net = MlpParams::init(&widths, Activation::Tanh, rng)?;
        let mut token_embedding = Matrix::zeros(vocab.size(), arch.embed_dim)?;
        for v in token_embedding.as_mut_slice() {
            *v = 0.5 * rng.normal();
        }
        Ok(Self { net, token_embedding, time_dim: arch.time_dim, horizon })
    }

    pub fn embed_dim(&self) -> usize {
        self.token_embedding.cols()
    }

    fn input(&self, x: Sample, prompt: &Prompt, t: usize) -> Result<Vec<f64>> {
        let e = self.embed_dim();
        let mut input = vec![0.0; 2 + e + self.time_dim];
        input[0] = x.0[0];
        input[1] = x.0[1];
        embed_prompt_into(prompt, &self.token_embedding, &mut input[2..2 + e])?;
        time_embedding_into(t, self.horizon, &mut input[2 + e..]);
        Ok(input)
    }

    pub fn forward(&self, x: Sample, prompt: &Prompt, t: usize) -> Result<DenoiserForward> {
        let (out, cache) = self.net.forward(&self.input(x, prompt, t)?)?;
        Ok(DenoiserForward { eps: [out[0], out[1]], cache })
    }

    pub fn try_predict(&self, x: Sample, prompt: &Prompt, t: usize) -> Result<[f64; 2]> {
        let out = self.net.predict(&self.input(x, prompt, t)?)?;
        Ok([out[0], out[1]])
    }

    /// Accumulate `∂/∂φ` of a scalar whose gradient w.r.t. `ε̂` is `eps_grad`.
    pub fn backward_accumulate(
        &self,
        fwd: &DenoiserForward,
        prompt: &Prompt,
        eps_grad: [f64; 2],
        grads: &mut DenoiserGrads,
    ) -> Result<()> {
        let input_grad = self.net.backward_accumulate(&fwd.cache, &eps_grad, &mut grads.net)?;
        let e = self.embed_dim();
        embed_prompt_backward(prompt, &input_grad[2..2 + e], &mut grads.token_embedding);
        Ok(())
    }
}

impl NoisePredictor for DenoiserParams {
    fn predict_noise(&self, x: Sample, prompt: &Prompt, t: usize) -> [f64; 2] {
        self.try_predict(x, prompt, t).expect("prompt validated against the denoiser vocabulary")
    }
}

/// Exact `E[ε | x_t, c]` for the prompt-conditioned Gaussian mixture.
///
/// Independent of any learned weights; used as a reference denoiser in tests,
/// in Monte Carlo oracles and by the browser demo.
pub struct MixtureOracle<'a> {
    pub dataset: &'a MixtureDataset,
    pub vocab: &'a Vocabulary,
    pub schedule: &'a NoiseSchedule,
}

impl MixtureOracle<'_> {
    /// Posterior mean `E[x₀ | x_t, c]`.
    pub fn posterior_mean(&self, x: Sample, prompt: &Prompt, t: usize) -> Sample {
        let w = self.dataset.mode_weights(prompt, self.vocab);
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.dataset.mode_std().powi(2);
        let var = ab * s2 + 1.0 - ab;
        let sab = ab.sqrt();
        let logs: Vec<f64> = self
            .dataset
            .centers()
            .iter()
            .zip(&w)
            .map(|(mu, &wk)| {
                if wk <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    wk.ln() - 0.5 * x.dist_sq(&(sab * *mu)) / var
                }
            })
            .collect();
        let post = crate::numerics::softmax(&logs);
        let gain = sab * s2 / var;
        let mut mean = Sample::ORIGIN;
        for (mu, p) in self.dataset.centers().iter().zip(post) {
            let comp = *mu + gain * (x - sab * *mu);
            mean = mean + p * comp;
        }
        mean
    }
}

impl NoisePredictor for MixtureOracle<'_> {
    fn predict_noise(&self, x: Sample, prompt: &Prompt, t: usize) -> [f64; 2] {
        let ab = self.schedule.alpha_bar(t);
        let m = self.posterior_mean(x, prompt, t);
        let r = (x - ab.sqrt() * m).0;
        let s = (1.0 - ab).sqrt();
        [r[0] / s, r[1] / s]
    }
}

/// One ε-matching training example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedExample {
    pub x0: Sample,
    pub prompt: Prompt,
    pub t: usize,
    pub eps: [f64; 2],
}

/// Squared error between predicted and injected noise, averaged over the batch
/// and both coordinates, with its gradient w.r.t. all denoiser parameters.
pub fn epsilon_loss_and_grad(
    params: &DenoiserParams,
    batch: &[NoisedExample],
    schedule: &NoiseSchedule,
) -> Result<(f64, DenoiserGrads)> {
    let mut grads = DenoiserGrads::zeros_like(params);
    let loss = epsilon_loss_accumulate(params, batch, schedule, &mut grads)?;
    Ok((loss, grads))
}

pub(crate) fn epsilon_loss_accumulate(
    params: &DenoiserParams,
    batch: &[NoisedExample],
    schedule: &NoiseSchedule,
    grads: &mut DenoiserGrads,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(usage_err("epsilon loss needs a non-empty batch"));
    }
    let n = (batch.len() * 2) as f64;
    let mut loss = 0.0;
    for ex in batch {
        let xt = super::forward_noise(ex.x0, ex.t, ex.eps, schedule)?;
        let fwd = params.forward(xt, &ex.prompt, ex.t)?;
        let r = [fwd.eps[0] - ex.eps[0], fwd.eps[1] - ex.eps[1]];
        loss += r[0] * r[0] + r[1] * r[1];
        params.backward_accumulate(&fwd, &ex.prompt, [2.0 * r[0] / n, 2.0 * r[1] / n], grads)?;
    }
    Ok(loss / n)
}
