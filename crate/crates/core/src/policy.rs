//! The refinement policy `π_θ(c_{t−1} | x̂_t, c_t, q, t)`.
//!
//! A relu MLP maps the state features to `L · V` logits; slot `i` owns logits
//! `i·V .. (i+1)·V` and slots are sampled independently.

use serde::{Deserialize, Serialize};

use crate::diffusion::{time_embedding_into, Sample};
use crate::error::{config_err, usage_err, Result};
use crate::numerics::{log_softmax, Activation, ForwardCache, Matrix, MlpGrads, MlpParams, ParamBlocks, RandomSource};
use crate::prompt::{embed_prompt_backward, embed_prompt_into, Prompt, Query, Vocabulary};

/// Largest norm of the scaled `x̂` feature. Early estimates divide by `√ᾱ_T` and
/// can be far outside the data range; their direction is kept, the magnitude capped.
pub const XHAT_FEATURE_CAP: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyArch {
    pub hidden: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    /// Std of the initial token embeddings. Prompts are embedded as a mean over
    /// slots, so a single informative token is diluted by the rest; a wide
    /// initialization keeps queries distinguishable to the untrained trunk.
    pub embed_init_std: f64,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self { hidden: 64, layers: 2, embed_dim: 8, time_dim: 16, embed_init_std: 3.0 }
    }
}

/// State `s_t` as seen by the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub x_hat: Sample,
    pub prompt: Prompt,
    pub query: Query,
    pub t: usize,
    pub horizon: usize,
}

/// Whether the `x̂` block of the features is visible to the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Visible,
    Masked,
}

/// Per-slot log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub log_probs: Vec<Vec<f64>>,
}

impl ActionDistribution {
    pub fn from_logits(logits: &[f64], slots: usize) -> Self {
        let v = logits.len() / slots;
        Self { log_probs: logits.chunks(v).map(log_softmax).collect() }
    }

    pub fn uniform(slots: usize, vocab_size: usize) -> Self {
        let lp = -(vocab_size as f64).ln();
        Self { log_probs: vec![vec![lp; vocab_size]; slots] }
    }

    pub fn num_slots(&self) -> usize {
        self.log_probs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.log_probs.first().map_or(0, Vec::len)
    }

    pub fn probs(&self, slot: usize) -> Vec<f64> {
        self.log_probs[slot].iter().map(|l| l.exp()).collect()
    }

    /// `log π(a | s) = Σ_i log π_i(a_i | s)`.
    pub fn log_prob(&self, action: &Prompt) -> Result<f64> {
        self.check_action(action)?;
        Ok(action.tokens().iter().zip(&self.log_probs).map(|(&a, lp)| lp[a]).sum())
    }

    pub fn slot_log_probs(&self, action: &Prompt) -> Result<Vec<f64>> {
        self.check_action(action)?;
        Ok(action.tokens().iter().zip(&self.log_probs).map(|(&a, lp)| lp[a]).collect())
    }

    pub fn sample(&self, rng: &mut RandomSource, vocab: &Vocabulary) -> Result<Prompt> {
        let tokens = (0..self.num_slots()).map(|i| rng.categorical(&self.probs(i))).collect();
        Prompt::new(tokens, vocab)
    }

    /// Most likely token per slot.
    pub fn argmax(&self, vocab: &Vocabulary) -> Result<Prompt> {
        let tokens = self
            .log_probs
            .iter()
            .map(|lp| (0..lp.len()).max_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap_or(0))
            .collect();
        Prompt::new(tokens, vocab)
    }

    pub fn entropy(&self) -> f64 {
        self.log_probs.iter().flat_map(|lp| lp.iter().map(|l| -l.exp() * l)).sum()
    }

    fn check_action(&self, action: &Prompt) -> Result<()> {
        if action.len() != self.num_slots() || action.tokens().iter().any(|&a| a >= self.vocab_size()) {
            return Err(usage_err("action does not fit the distribution's slots"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub net: MlpParams,
    pub token_embedding: Matrix,
    pub prompt_len: usize,
    pub time_dim: usize,
    /// Multiplies `x̂` before it enters the features (1 / data radius).
    pub x_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub net: MlpGrads,
    pub token_embedding: Matrix,
}

impl PolicyGrads {
    pub fn zeros_like(p: &PolicyParams) -> Self {
        let (r, c) = p.token_embedding.shape();
        Self { net: MlpGrads::zeros_like(&p.net), token_embedding: Matrix::zeros(r, c).expect("positive") }
    }

    pub fn fill_zero(&mut self) {
        self.net.fill_zero();
        self.token_embedding.fill(0.0);
    }
}

macro_rules! blocks_impl {
    ($t:ty) => {
        impl ParamBlocks for $t {
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
    };
}
blocks_impl!(PolicyParams);
blocks_impl!(PolicyGrads);

/// A forward pass kept for backpropagation.
pub struct PolicyForward {
    pub dist: ActionDistribution,
    cache: ForwardCache,
}

impl PolicyParams {
    /// Relu trunk with zero-initialized heads, so the untrained policy is uniform.
    pub fn init(arch: PolicyArch, vocab: &Vocabulary, x_scale: f64, rng: &mut RandomSource) -> Result<Self> {
        if arch.layers == 0 || arch.hidden == 0 || arch.embed_dim == 0 || !(arch.embed_init_std > 0.0) {
            return Err(config_err("policy needs positive hidden width, depth and embedding size"));
        }
        if arch.time_dim == 0 || arch.time_dim % 2 != 0 {
            return Err(config_err("time embedding dimension must be positive and even"));
        }
        if !(x_scale > 0.0) {
            return Err(config_err("policy x_scale must be positive"));
        }
        let input = 2 + 2 * arch.embed_dim + arch.time_dim;
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(arch.hidden).take(arch.layers));
        widths.push(vocab.prompt_len() * vocab.size());
        let mut net = MlpParams::init(&widths, Activation::Relu, rng)?;
        let last = net.layers().len() - 1;
        net.layer_mut(last).weight.fill(0.0);
        let mut token_embedding = Matrix::zeros(vocab.size(), arch.embed_dim)?;
        for v in token_embedding.as_mut_slice() {
            *v = arch.embed_init_std * rng.normal();
        }
        Ok(Self { net, token_embedding, prompt_len: vocab.prompt_len(), time_dim: arch.time_dim, x_scale })
    }

    pub fn embed_dim(&self) -> usize {
        self.token_embedding.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.rows()
    }

    pub fn feature_dim(&self) -> usize {
        2 + 2 * self.embed_dim() + self.time_dim
    }

    /// `[x̂ · x_scale (norm-capped), embed(c_t), embed(q), time(t / T)]`.
    pub fn featurize(&self, state: &MdpState, feedback: Feedback) -> Result<Vec<f64>> {
        if state.t == 0 || state.t > state.horizon {
            return Err(usage_err(format!("state timestep {} outside 1..={}", state.t, state.horizon)));
        }
        let e = self.embed_dim();
        let mut f = vec![0.0; self.feature_dim()];
        if feedback == Feedback::Visible {
            let mut x = [state.x_hat.0[0] * self.x_scale, state.x_hat.0[1] * self.x_scale];
            let norm = x[0].hypot(x[1]);
            if norm > XHAT_FEATURE_CAP {
                x = [x[0] * XHAT_FEATURE_CAP / norm, x[1] * XHAT_FEATURE_CAP / norm];
            } else if !norm.is_finite() {
                return Err(usage_err("non-finite denoised estimate in state"));
            }
            f[..2].copy_from_slice(&x);
        }
        embed_prompt_into(&state.prompt, &self.token_embedding, &mut f[2..2 + e])?;
        embed_prompt_into(state.query.prompt(), &self.token_embedding, &mut f[2 + e..2 + 2 * e])?;
        time_embedding_into(state.t, state.horizon, &mut f[2 + 2 * e..]);
        Ok(f)
    }

    pub fn forward(&self, state: &MdpState, feedback: Feedback) -> Result<PolicyForward> {
        let (logits, cache) = self.net.forward(&self.featurize(state, feedback)?)?;
        Ok(PolicyForward { dist: ActionDistribution::from_logits(&logits, self.prompt_len), cache })
    }

    pub fn distribution(&self, state: &MdpState, feedback: Feedback) -> Result<ActionDistribution> {
        let logits = self.net.predict(&self.featurize(state, feedback)?)?;
        Ok(ActionDistribution::from_logits(&logits, self.prompt_len))
    }

    /// Accumulate `∂/∂θ` of a scalar whose gradient w.r.t. the flat `L·V` logits is `logit_grad`.
    pub fn backward_accumulate(
        &self,
        fwd: &PolicyForward,
        state: &MdpState,
        logit_grad: &[f64],
        grads: &mut PolicyGrads,
    ) -> Result<()> {
        let input_grad = self.net.backward_accumulate(&fwd.cache, logit_grad, &mut grads.net)?;
        let e = self.embed_dim();
        embed_prompt_backward(&state.prompt, &input_grad[2..2 + e], &mut grads.token_embedding);
        embed_prompt_backward(state.query.prompt(), &input_grad[2 + e..2 + 2 * e], &mut grads.token_embedding);
        Ok(())
    }
}

pub fn featurize_state(params: &PolicyParams, state: &MdpState, feedback: Feedback) -> Result<Vec<f64>> {
    params.featurize(state, feedback)
}

pub fn policy_distribution(params: &PolicyParams, state: &MdpState, feedback: Feedback) -> Result<ActionDistribution> {
    params.distribution(state, feedback)
}

/// Draw one token per slot; returns the prompt and its total log-probability.
pub fn sample_action(
    params: &PolicyParams,
    state: &MdpState,
    feedback: Feedback,
    vocab: &Vocabulary,
    rng: &mut RandomSource,
) -> Result<(Prompt, f64)> {
    let dist = params.distribution(state, feedback)?;
    let action = dist.sample(rng, vocab)?;
    let lp = dist.log_prob(&action)?;
    Ok((action, lp))
}

pub fn action_logprob(params: &PolicyParams, state: &MdpState, action: &Prompt, feedback: Feedback) -> Result<f64> {
    params.distribution(state, feedback)?.log_prob(action)
}

/// `∂ log π_i(a_i) / ∂ z_i = onehot(a_i) − p_i`, scaled by `weight`, written into `out`.
pub(crate) fn add_logprob_logit_grad(dist: &ActionDistribution, action: &Prompt, slot: usize, weight: f64, out: &mut [f64]) {
    let v = dist.vocab_size();
    let seg = &mut out[slot * v..(slot + 1) * v];
    for (k, lp) in dist.log_probs[slot].iter().enumerate() {
        seg[k] -= weight * lp.exp();
    }
    seg[action.tokens()[slot]] += weight;
}

/// `log π(a | s)` and its gradient w.r.t. every policy parameter.
pub fn action_logprob_and_grad(
    params: &PolicyParams,
    state: &MdpState,
    action: &Prompt,
    feedback: Feedback,
) -> Result<(f64, PolicyGrads)> {
    let fwd = params.forward(state, feedback)?;
    let lp = fwd.dist.log_prob(action)?;
    let mut dz = vec![0.0; params.prompt_len * params.vocab_size()];
    for slot in 0..params.prompt_len {
        add_logprob_logit_grad(&fwd.dist, action, slot, 1.0, &mut dz);
    }
    let mut grads = PolicyGrads::zeros_like(params);
    params.backward_accumulate(&fwd, state, &dz, &mut grads)?;
    Ok((lp, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, flatten, unflatten_into, Layer};

    fn vocab() -> Vocabulary {
        Vocabulary::desk_default()
    }

    fn state(v: &Vocabulary, t: usize) -> MdpState {
        MdpState {
            x_hat: Sample::new(1.5, -3.0),
            prompt: v.parse("MODE_1 NULL AMBIG_0_4 NULL").unwrap(),
            query: v.single_token_query(v.ambiguous(0)),
            t,
            horizon: 50,
        }
    }

    fn random_policy(seed: u64, v: &Vocabulary) -> PolicyParams {
        let arch = PolicyArch { hidden: 7, layers: 2, embed_dim: 3, time_dim: 4, embed_init_std: 1.0 };
        let mut rng = RandomSource::new(seed);
        let mut p = PolicyParams::init(arch, v, 0.2, &mut rng).unwrap();
        let last = p.net.layers().len() - 1;
        for w in p.net.layer_mut(last).weight.as_mut_slice() {
            *w = rng.normal();
        }
        p
    }

    #[test]
    fn zero_heads_give_uniform_slots() {
        let v = vocab();
        let p = PolicyParams::init(PolicyArch::default(), &v, 0.2, &mut RandomSource::new(0)).unwrap();
        assert_eq!(p.feature_dim(), 34);
        let d = p.distribution(&state(&v, 10), Feedback::Visible).unwrap();
        assert_eq!(d.num_slots(), 4);
        for slot in &d.log_probs {
            for &l in slot {
                assert!((l - (1.0f64 / 16.0).ln()).abs() < 1e-12);
            }
        }
        let a = v.parse("MODE_1 MODE_2 NULL STYLE_0").unwrap();
        assert!((d.log_prob(&a).unwrap() - 4.0 * (1.0f64 / 16.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn slots_normalised() {
        let v = vocab();
        let p = random_policy(3, &v);
        let d = p.distribution(&state(&v, 30), Feedback::Visible).unwrap();
        for i in 0..4 {
            assert!((d.probs(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_blocks() {
        let v = vocab();
        let p = random_policy(4, &v);
        let a = p.featurize(&state(&v, 10), Feedback::Visible).unwrap();
        assert_eq!(a, p.featurize(&state(&v, 10), Feedback::Visible).unwrap());
        let b = p.featurize(&state(&v, 20), Feedback::Visible).unwrap();
        let time_start = 2 + 2 * p.embed_dim();
        assert_eq!(a[..time_start], b[..time_start]);
        assert_ne!(a[time_start..], b[time_start..]);
        let m = p.featurize(&state(&v, 10), Feedback::Masked).unwrap();
        assert_eq!(&m[..2], &[0.0, 0.0]);
        assert_eq!(a[2..], m[2..]);
        assert_eq!(&a[..2], &[1.5 * 0.2, -3.0 * 0.2]);
    }

    #[test]
    fn xhat_feature_is_norm_capped() {
        let v = vocab();
        let p = random_policy(4, &v);
        let mut s = state(&v, 50);
        s.x_hat = Sample::new(300.0, -400.0);
        let f = p.featurize(&s, Feedback::Visible).unwrap();
        assert!((f[0].hypot(f[1]) - XHAT_FEATURE_CAP).abs() < 1e-12);
        assert!((f[0] / f[1] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_two_token_one_slot() {
        // V = 2, L = 1: a 1-layer net whose logits are W f + b
        let v = Vocabulary::new(2, 0, 1).unwrap();
        assert_eq!(v.size(), 4);
        let feat = 2 + 2 + 2;
        let mut w = Matrix::zeros(4, feat).unwrap();
        w.set(0, 0, 1.0);
        w.set(1, 1, -2.0);
        let net = MlpParams::from_layers(vec![Layer { weight: w, bias: vec![0.0, 0.5, -1.0, 0.0], activation: Activation::Linear }]).unwrap();
        let p = PolicyParams {
            net,
            token_embedding: Matrix::zeros(4, 1).unwrap(),
            prompt_len: 1,
            time_dim: 2,
            x_scale: 1.0,
        };
        let s = MdpState {
            x_hat: Sample::new(0.5, 0.25),
            prompt: Prompt::new(vec![0], &v).unwrap(),
            query: Query(Prompt::new(vec![0], &v).unwrap()),
            t: 1,
            horizon: 1,
        };
        let d = p.distribution(&s, Feedback::Visible).unwrap();
        let z = [0.5f64, -0.5 + 0.5, -1.0, 0.0];
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for k in 0..4 {
            assert!((d.log_probs[0][k] - (z[k].exp() / norm).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn exhaustive_enumeration_sums_to_one() {
        // V = 3 (two modes and NULL), L = 2
        let v = Vocabulary::new(2, 0, 2).unwrap();
        let arch = PolicyArch { hidden: 5, layers: 1, embed_dim: 2, time_dim: 2, embed_init_std: 1.0 };
        let mut rng = RandomSource::new(9);
        let mut p = PolicyParams::init(arch, &v, 1.0, &mut rng).unwrap();
        for w in p.net.layer_mut(1).weight.as_mut_slice() {
            *w = rng.normal();
        }
        let s = MdpState {
            x_hat: Sample::new(0.3, 0.1),
            prompt: Prompt::new(vec![0, 2], &v).unwrap(),
            query: Query(Prompt::new(vec![1, 2], &v).unwrap()),
            t: 2,
            horizon: 4,
        };
        let d = p.distribution(&s, Feedback::Visible).unwrap();
        let mut total = 0.0;
        for a in 0..v.size() {
            for b in 0..v.size() {
                total += d.log_prob(&Prompt::new(vec![a, b], &v).unwrap()).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_logprob_is_consistent_and_reproducible() {
        let v = vocab();
        let p = random_policy(5, &v);
        let s = state(&v, 17);
        let (a, lp) = sample_action(&p, &s, Feedback::Visible, &v, &mut RandomSource::new(1)).unwrap();
        let (b, lp2) = sample_action(&p, &s, Feedback::Visible, &v, &mut RandomSource::new(1)).unwrap();
        assert_eq!((a.clone(), lp), (b, lp2));
        assert_eq!(action_logprob(&p, &s, &a, Feedback::Visible).unwrap(), lp);
    }

    #[test]
    fn degenerate_distribution_always_picks_its_token() {
        let v = vocab();
        let mut p = random_policy(6, &v);
        let last = p.net.layers().len() - 1;
        p.net.layer_mut(last).weight.fill(0.0);
        let mut bias = vec![0.0; 64];
        for slot in 0..4 {
            bias[slot * 16 + 3] = 1e3;
        }
        p.net.layer_mut(last).bias = bias;
        let mut rng = RandomSource::new(2);
        for _ in 0..200 {
            let (a, _) = sample_action(&p, &state(&v, 5), Feedback::Visible, &v, &mut rng).unwrap();
            assert_eq!(a.tokens(), &[3, 3, 3, 3]);
        }
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let v = vocab();
        let p = random_policy(7, &v);
        let s = state(&v, 40);
        let d = p.distribution(&s, Feedback::Visible).unwrap();
        let n = 100_000;
        let mut counts = vec![[0usize; 16]; 4];
        let mut rng = RandomSource::new(8);
        for _ in 0..n {
            let a = d.sample(&mut rng, &v).unwrap();
            for (slot, &tok) in a.tokens().iter().enumerate() {
                counts[slot][tok] += 1;
            }
        }
        for slot in 0..4 {
            let probs = d.probs(slot);
            for k in 0..16 {
                let f = counts[slot][k] as f64 / n as f64;
                let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
                assert!((f - probs[k]).abs() <= 3.0 * se + 1e-12, "slot {slot} tok {k}: {f} vs {}", probs[k]);
            }
        }
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let v = vocab();
        let mut rng = RandomSource::new(10);
        for trial in 0..5 {
            let p = random_policy(100 + trial, &v);
            let s = state(&v, 1 + rng.below(50));
            let a = p.distribution(&s, Feedback::Visible).unwrap().sample(&mut rng, &v).unwrap();
            let mut probe = p.clone();
            let report = finite_diff_check(
                |th: &[f64]| {
                    unflatten_into(&mut probe, th);
                    let (l, g) = action_logprob_and_grad(&probe, &s, &a, Feedback::Visible).unwrap();
                    (l, flatten(&g))
                },
                &flatten(&p),
                1e-4,
            );
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn invalid_timestep_rejected() {
        let v = vocab();
        let p = random_policy(1, &v);
        assert!(p.featurize(&state(&v, 0), Feedback::Visible).is_err());
        assert!(p.featurize(&state(&v, 51), Feedback::Visible).is_err());
    }
}
