use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use promptloop_core::baselines::DiffusionRlConfig;
use promptloop_core::diffusion::{DenoiserTrainConfig, MixtureDataset, MixtureSpec, SamplerKind, ScheduleSpec};
use promptloop_core::grpo::{GrpoConfig, Regime};
use promptloop_core::policy::PolicyArch;
use promptloop_core::prompt::{Query, Vocabulary};
use promptloop_core::rewards::{RewardFn, RewardSpec, DEFAULT_BANDWIDTH};

use crate::exit::invalid;

/// Everything that defines an experiment. Missing keys take desk defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: MixtureSpec,
    pub schedule: ScheduleSpec,
    pub vocab: VocabConfig,
    pub sampler: SamplerKind,
    pub denoiser: DenoiserTrainConfig,
    pub reward: RewardConfig,
    pub policy: PolicyConfig,
    /// The learning rate here is sized for the small policy MLP; much higher rates collapse the prompt distribution.
    pub grpo: GrpoConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub diffusion_rl: DiffusionRlConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/promptloop"),
            dataset: MixtureSpec::default(),
            schedule: ScheduleSpec::default(),
            vocab: VocabConfig::default(),
            sampler: SamplerKind::default(),
            denoiser: DenoiserTrainConfig::default(),
            reward: RewardConfig::default(),
            policy: PolicyConfig::default(),
            grpo: GrpoConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            diffusion_rl: DiffusionRlConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub num_style: usize,
    pub prompt_len: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { num_style: 3, prompt_len: 4 }
    }
}

/// Which queries the policy is trained and evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySet {
    /// Mode queries for mode_match, ambiguous ones for ambiguous_nearest, both for composite.
    #[default]
    Auto,
    Mode,
    Ambiguous,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub spec: RewardSpec,
    pub bandwidth: f64,
    pub queries: QuerySet,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { spec: RewardSpec::ModeMatch, bandwidth: DEFAULT_BANDWIDTH, queries: QuerySet::Auto }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub arch: PolicyArch,
    /// Multiplier on `x̂` before it enters the policy; 0 means `1 / radius`.
    pub x_scale: f64,
    pub checkpoint_every: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { arch: PolicyArch::default(), x_scale: 0.0, checkpoint_every: 50 }
    }
}

/// Evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Identity,
    Feedforward,
    ClosedLoop,
    Blind,
    Precomputed,
    Controller,
    DiffusionRl,
}

impl EvalMode {
    pub const ALL: [EvalMode; 7] = [
        EvalMode::Identity,
        EvalMode::Feedforward,
        EvalMode::ClosedLoop,
        EvalMode::Blind,
        EvalMode::Precomputed,
        EvalMode::Controller,
        EvalMode::DiffusionRl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Identity => "identity",
            EvalMode::Feedforward => "feedforward",
            EvalMode::ClosedLoop => "closed-loop",
            EvalMode::Blind => "blind",
            EvalMode::Precomputed => "precomputed",
            EvalMode::Controller => "controller",
            EvalMode::DiffusionRl => "diffusion-rl",
        }
    }

    /// Policy whose checkpoint this mode evaluates, if any.
    pub fn regime(self) -> Option<Regime> {
        match self {
            EvalMode::Feedforward => Some(Regime::FeedForward),
            EvalMode::ClosedLoop | EvalMode::Precomputed => Some(Regime::ClosedLoop),
            EvalMode::Blind => Some(Regime::Blind),
            EvalMode::Identity | EvalMode::Controller | EvalMode::DiffusionRl => None,
        }
    }

    /// Modes that always refine exactly once at `t = T`.
    pub fn single_refinement(self) -> bool {
        matches!(self, EvalMode::Identity | EvalMode::Feedforward | EvalMode::DiffusionRl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub refine_steps: usize,
    pub episodes: usize,
    pub bootstrap_resamples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mode: EvalMode::ClosedLoop, refine_steps: 5, episodes: 500, bootstrap_resamples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub refine_steps: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { refine_steps: vec![1, 2, 3, 5] }
    }
}

/// Checkpoint locations; empty means the default inside `out`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub denoiser: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: promptloop_core::Result<()>| r.map_err(|e| invalid(e.to_string()));
        self.vocabulary()?;
        MixtureDataset::new(self.dataset).map_err(|e| invalid(e.to_string()))?;
        check(self.schedule.build().map(|_| ()))?;
        check(self.denoiser.validate())?;
        check(self.grpo.validate(self.schedule.steps))?;
        self.reward_fn()?;
        if self.queries()?.is_empty() {
            return Err(invalid("the configured query set is empty"));
        }
        if self.eval.refine_steps == 0 || self.eval.refine_steps > self.schedule.steps {
            return Err(invalid(format!("eval.refine_steps must be in 1..={}", self.schedule.steps)));
        }
        if let Some(bad) = self.sweep.refine_steps.iter().find(|&&n| n == 0 || n > self.schedule.steps) {
            return Err(invalid(format!("sweep.refine_steps entry {bad} outside 1..={}", self.schedule.steps)));
        }
        if !(self.reward.bandwidth > 0.0) || !(self.policy.x_scale >= 0.0) || self.policy.checkpoint_every == 0 {
            return Err(invalid("bandwidth must be positive, x_scale non-negative and checkpoint_every positive"));
        }
        if let SamplerKind::Ddim { eta } = self.sampler {
            if !(eta >= 0.0) {
                return Err(invalid("DDIM eta must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.dataset.modes, self.vocab.num_style, self.vocab.prompt_len).map_err(|e| invalid(e.to_string()))
    }

    pub fn dataset(&self) -> Result<MixtureDataset> {
        MixtureDataset::new(self.dataset).map_err(|e| invalid(e.to_string()))
    }

    pub fn reward_fn(&self) -> Result<RewardFn> {
        RewardFn::new(self.reward.spec, self.reward.bandwidth, self.dataset()?, self.vocabulary()?)
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn queries(&self) -> Result<Vec<Query>> {
        let v = self.vocabulary()?;
        let set = match (self.reward.queries, self.reward.spec) {
            (QuerySet::Auto, RewardSpec::ModeMatch) | (QuerySet::Mode, _) => v.mode_queries(),
            (QuerySet::Auto, RewardSpec::AmbiguousNearest) | (QuerySet::Ambiguous, _) => v.ambiguous_queries(),
            (QuerySet::Auto, RewardSpec::Composite { .. }) | (QuerySet::All, _) => {
                let mut q = v.mode_queries();
                q.extend(v.ambiguous_queries());
                q
            }
        };
        let reward = self.reward_fn()?;
        if let Some(bad) = set.iter().find(|q| !reward.accepts(q)) {
            return Err(invalid(format!("reward `{}` cannot score query `{}`", self.reward.spec.name(), v.render(bad.prompt()))));
        }
        Ok(set)
    }

    pub fn x_scale(&self) -> f64 {
        if self.policy.x_scale > 0.0 {
            self.policy.x_scale
        } else {
            1.0 / self.dataset.radius
        }
    }

    pub fn denoiser_dir(&self) -> PathBuf {
        self.out.join("denoiser")
    }

    pub fn denoiser_checkpoint(&self) -> PathBuf {
        self.paths.denoiser.clone().unwrap_or_else(|| self.denoiser_dir().join("checkpoint.json"))
    }

    pub fn policy_dir(&self, regime: Regime) -> PathBuf {
        self.out.join(format!("policy_{}", regime_name(regime)))
    }

    /// `paths.policy` overrides only the checkpoint of the configured training regime.
    pub fn policy_checkpoint(&self, regime: Regime) -> PathBuf {
        match &self.paths.policy {
            Some(p) if regime == self.grpo.regime => p.clone(),
            _ => self.policy_dir(regime).join("checkpoint.json"),
        }
    }
}

pub fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::ClosedLoop => "closed_loop",
        Regime::Blind => "blind",
        Regime::FeedForward => "feed_forward",
    }
}
