//! Analytic terminal rewards `r(x₀, q)`.

use serde::{Deserialize, Serialize};

use crate::diffusion::{MixtureDataset, Sample};
use crate::error::{config_err, Error, Result};
use crate::prompt::{prompt_length, Prompt, Query, TokenKind, Vocabulary};

/// Default reward bandwidth `s_r`.
pub const DEFAULT_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    ModeMatch,
    AmbiguousNearest,
    Composite {
        w_match: f64,
        w_len: f64,
        w_fmt: f64,
        /// Number of non-NULL tokens allowed before the length penalty applies.
        budget: usize,
    },
}

impl RewardSpec {
    pub fn composite_default() -> Self {
        RewardSpec::Composite { w_match: 1.0, w_len: 0.5, w_fmt: 0.2, budget: 1 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RewardSpec::ModeMatch => "mode_match",
            RewardSpec::AmbiguousNearest => "ambiguous_nearest",
            RewardSpec::Composite { .. } => "composite",
        }
    }
}

/// Total reward and its components. For single rewards only `alignment` is non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardValue {
    pub total: f64,
    pub alignment: f64,
    pub length_penalty: f64,
    pub format: f64,
}

/// A reward spec bound to the data it scores against.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFn {
    pub spec: RewardSpec,
    pub bandwidth: f64,
    pub dataset: MixtureDataset,
    pub vocab: Vocabulary,
}

impl RewardFn {
    pub fn new(spec: RewardSpec, bandwidth: f64, dataset: MixtureDataset, vocab: Vocabulary) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(config_err("reward bandwidth must be positive"));
        }
        if let RewardSpec::Composite { w_match, w_len, w_fmt, budget } = spec {
            if [w_match, w_len, w_fmt].iter().any(|w| !(*w >= 0.0)) {
                return Err(config_err("composite reward weights must be non-negative"));
            }
            if budget > vocab.prompt_len() {
                return Err(config_err(format!("length budget {budget} exceeds prompt length {}", vocab.prompt_len())));
            }
        }
        Ok(Self { spec, bandwidth, dataset, vocab })
    }

    /// Whether `q` is a query this reward can score.
    pub fn accepts(&self, q: &Query) -> bool {
        match self.spec {
            RewardSpec::ModeMatch => query_mode(q, &self.vocab).is_some(),
            RewardSpec::AmbiguousNearest => query_pair(q, &self.vocab).is_some(),
            RewardSpec::Composite { .. } => query_mode(q, &self.vocab).is_some() || query_pair(q, &self.vocab).is_some(),
        }
    }

    pub fn evaluate(&self, x0: Sample, q: &Query, final_prompt: &Prompt) -> Result<RewardValue> {
        match self.spec {
            RewardSpec::ModeMatch => {
                let r = mode_match(x0, q, &self.dataset, &self.vocab, self.bandwidth)?;
                Ok(RewardValue { total: r, alignment: r, ..Default::default() })
            }
            RewardSpec::AmbiguousNearest => {
                let r = ambiguous_nearest(x0, q, &self.dataset, &self.vocab, self.bandwidth)?;
                Ok(RewardValue { total: r, alignment: r, ..Default::default() })
            }
            RewardSpec::Composite { .. } => composite(x0, q, final_prompt, self),
        }
    }
}

fn query_mode(q: &Query, vocab: &Vocabulary) -> Option<usize> {
    q.prompt().tokens().iter().find_map(|&t| match vocab.kind(t) {
        Some(TokenKind::Mode(k)) => Some(k),
        _ => None,
    })
}

fn query_pair(q: &Query, vocab: &Vocabulary) -> Option<(usize, usize)> {
    q.prompt().tokens().iter().find_map(|&t| match vocab.kind(t) {
        Some(TokenKind::Ambiguous(i, j)) => Some((i, j)),
        _ => None,
    })
}

fn gaussian_score(x0: Sample, center: Sample, bandwidth: f64) -> f64 {
    (-x0.dist_sq(&center) / (2.0 * bandwidth * bandwidth)).exp()
}

/// `exp(−‖x₀ − μ_q‖² / (2 s_r²))` for the first mode token of `q`.
pub fn mode_match(x0: Sample, q: &Query, dataset: &MixtureDataset, vocab: &Vocabulary, bandwidth: f64) -> Result<f64> {
    let k = query_mode(q, vocab)
        .ok_or_else(|| Error::Specification(format!("mode_match needs a MODE token in the query, got `{}`", vocab.render(q.prompt()))))?;
    Ok(gaussian_score(x0, dataset.center(k), bandwidth))
}

/// Best mode-match score over the two modes named by the query's ambiguous token.
pub fn ambiguous_nearest(
    x0: Sample,
    q: &Query,
    dataset: &MixtureDataset,
    vocab: &Vocabulary,
    bandwidth: f64,
) -> Result<f64> {
    let (i, j) = query_pair(q, vocab).ok_or_else(|| {
        Error::Specification(format!(
            "ambiguous_nearest needs an AMBIG token in the query, got `{}`",
            vocab.render(q.prompt())
        ))
    })?;
    Ok(gaussian_score(x0, dataset.center(i), bandwidth).max(gaussian_score(x0, dataset.center(j), bandwidth)))
}

/// Weighted alignment, length and format terms. Alignment is mode-match for mode
/// queries and ambiguous-nearest for ambiguous ones.
pub fn composite(x0: Sample, q: &Query, final_prompt: &Prompt, reward: &RewardFn) -> Result<RewardValue> {
    let RewardSpec::Composite { w_match, w_len, w_fmt, budget } = reward.spec else {
        return Err(Error::Specification("composite() called with a non-composite spec".into()));
    };
    let vocab = &reward.vocab;
    let alignment = if query_mode(q, vocab).is_some() {
        mode_match(x0, q, &reward.dataset, vocab, reward.bandwidth)?
    } else {
        ambiguous_nearest(x0, q, &reward.dataset, vocab, reward.bandwidth)?
    };
    let len = prompt_length(final_prompt, vocab);
    let length_penalty = -(len.saturating_sub(budget) as f64) / vocab.prompt_len() as f64;
    let has_mode = final_prompt.tokens().iter().any(|&t| matches!(vocab.kind(t), Some(TokenKind::Mode(_))));
    let format = if has_mode { 1.0 } else { 0.0 };
    Ok(RewardValue {
        total: w_match * alignment + w_len * length_penalty + w_fmt * format,
        alignment,
        length_penalty,
        format,
    })
}
