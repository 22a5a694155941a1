use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::numerics::RandomSource;
use crate::prompt::{Prompt, TokenKind, Vocabulary};

/// A point in the 2D toy latent space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sample(pub [f64; 2]);

impl Sample {
    pub const ORIGIN: Sample = Sample([0.0, 0.0]);

    pub fn new(x: f64, y: f64) -> Self {
        Sample([x, y])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn dist_sq(&self, other: &Sample) -> f64 {
        (self.0[0] - other.0[0]).powi(2) + (self.0[1] - other.0[1]).powi(2)
    }

    pub fn dist(&self, other: &Sample) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Sample {
    type Output = Sample;
    fn add(self, o: Sample) -> Sample {
        Sample([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl Sub for Sample {
    type Output = Sample;
    fn sub(self, o: Sample) -> Sample {
        Sample([self.0[0] - o.0[0], self.0[1] - o.0[1]])
    }
}

impl Mul<Sample> for f64 {
    type Output = Sample;
    fn mul(self, s: Sample) -> Sample {
        Sample([self * s.0[0], self * s.0[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub modes: usize,
    pub radius: f64,
    pub mode_std: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self { modes: 8, radius: 5.0, mode_std: 0.1 }
    }
}

/// K isotropic Gaussian modes evenly spaced on a circle, paired with prompts.
///
/// A prompt selects modes by voting: every `MODE_k` token is one vote for `k`,
/// every `AMBIG_i_j` half a vote for each of `i` and `j`, and `NULL`/`STYLE_*`
/// tokens abstain. With `m` votes out of `L` slots the intended mode is drawn in
/// proportion to the votes with probability `m / L`; otherwise the mode is
/// uniform. An all-`MODE_k` prompt therefore pins mode `k`, a single token only
/// nudges towards it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDataset {
    spec: MixtureSpec,
    centers: Vec<Sample>,
}

impl MixtureDataset {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        if spec.modes < 2 {
            return Err(config_err("mixture needs at least two modes"));
        }
        if !(spec.radius > 0.0) || !(spec.mode_std > 0.0) {
            return Err(config_err("mixture radius and mode std must be positive"));
        }
        let centers = (0..spec.modes)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / spec.modes as f64;
                Sample::new(spec.radius * a.cos(), spec.radius * a.sin())
            })
            .collect();
        Ok(Self { spec, centers })
    }

    pub fn spec(&self) -> MixtureSpec {
        self.spec
    }

    pub fn centers(&self) -> &[Sample] {
        &self.centers
    }

    pub fn center(&self, k: usize) -> Sample {
        self.centers[k]
    }

    pub fn mode_std(&self) -> f64 {
        self.spec.mode_std
    }

    pub fn nearest_mode(&self, x: &Sample) -> usize {
        self.centers
            .iter()
            .enumerate()
            .min_by(|a, b| x.dist_sq(a.1).total_cmp(&x.dist_sq(b.1)))
            .map(|(k, _)| k)
            .expect("at least two modes")
    }

    /// Mode probabilities encoded by `prompt` (see the type-level docs).
    pub fn mode_weights(&self, prompt: &Prompt, vocab: &Vocabulary) -> Vec<f64> {
        let k = self.spec.modes;
        let mut votes = vec![0.0; k];
        for &t in prompt.tokens() {
            match vocab.kind(t) {
                Some(TokenKind::Mode(m)) => votes[m] += 1.0,
                Some(TokenKind::Ambiguous(i, j)) => {
                    votes[i] += 0.5;
                    votes[j] += 0.5;
                }
                _ => {}
            }
        }
        let slots = prompt.len() as f64;
        let total: f64 = votes.iter().sum();
        let uniform = (1.0 - total / slots) / k as f64;
        votes.iter().map(|v| v / slots + uniform).collect()
    }

    pub fn sample_mode(&self, prompt: &Prompt, vocab: &Vocabulary, rng: &mut RandomSource) -> usize {
        rng.categorical(&self.mode_weights(prompt, vocab))
    }

    pub fn sample_from_mode(&self, k: usize, rng: &mut RandomSource) -> Sample {
        let [a, b] = rng.normal2();
        self.centers[k] + self.spec.mode_std * Sample::new(a, b)
    }

    /// Training prompt distribution: a primary mode filling all L slots with probability
    /// 0.4, otherwise repeated 0..L times with the remaining slots holding NULL, style,
    /// ambiguous or a secondary mode token. Full-strength prompts are oversampled so the
    /// pinned case is fitted sharply.
    pub fn sample_training_prompt(&self, vocab: &Vocabulary, rng: &mut RandomSource) -> Prompt {
        let l = vocab.prompt_len();
        let primary = rng.below(self.spec.modes);
        let secondary = rng.below(self.spec.modes);
        let repeats = if rng.uniform() < 0.4 { l } else { rng.below(l) };
        let mut tokens = Vec::with_capacity(l);
        for slot in 0..l {
            if slot < repeats {
                tokens.push(vocab.mode(primary));
                continue;
            }
            let u = rng.uniform();
            let token = if u < 0.6 {
                vocab.null()
            } else if u < 0.72 && vocab.size() > vocab.num_modes() + 1 + vocab.ambiguous_pairs().len() {
                let n_style = vocab.size() - vocab.num_modes() - 1 - vocab.ambiguous_pairs().len();
                vocab.style(rng.below(n_style))
            } else if u < 0.85 {
                vocab.ambiguous(rng.below(vocab.ambiguous_pairs().len()))
            } else {
                vocab.mode(secondary)
            };
            tokens.push(token);
        }
        // order is irrelevant to the mean embedding; shuffle anyway so slot statistics are uniform
        for i in (1..l).rev() {
            let j = rng.below(i + 1);
            tokens.swap(i, j);
        }
        Prompt::new(tokens, vocab).expect("constructed from valid ids")
    }

    pub fn sample_pair(&self, vocab: &Vocabulary, rng: &mut RandomSource) -> (Prompt, Sample) {
        let prompt = self.sample_training_prompt(vocab, rng);
        let k = self.sample_mode(&prompt, vocab, rng);
        (prompt, self.sample_from_mode(k, rng))
    }
}
