use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use promptloop_core::baselines::{diffusion_rl_finetune, feedforward_rollout, identity_rollout};
use promptloop_core::checkpoint::{self, DenoiserCheckpoint, PolicyCheckpoint};
use promptloop_core::diffusion::{sample_with_prompt, train_denoiser, DenoiserParams, MixtureDataset, NoiseSchedule};
use promptloop_core::env::{
    inference_schedule, policy_rollout, rollout, write_jsonl, EpisodeRecord, FeedbackMode, NearestModeController,
    RolloutEnv, RolloutKind,
};
use promptloop_core::grpo::{train_policy, PolicyTask, Regime, TrainerState, UpdateMetrics};
use promptloop_core::numerics::RandomSource;
use promptloop_core::policy::PolicyParams;
use promptloop_core::prompt::{Prompt, Query, Vocabulary};
use promptloop_core::rewards::RewardFn;
use promptloop_core::stats::{paired_difference, summarize_with, Summary};

use crate::config::{regime_name, EvalMode, ExperimentConfig};
use crate::exit::{invalid, missing};
use crate::output::{csv_writer, num, opt, write_json, StageDir};

/// Frozen pieces rebuilt from the config and the denoiser checkpoint.
pub struct World {
    pub dataset: MixtureDataset,
    pub vocab: Vocabulary,
    pub schedule: NoiseSchedule,
    pub reward: RewardFn,
    pub queries: Vec<Query>,
    pub denoiser: DenoiserParams,
}

impl World {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let path = cfg.denoiser_checkpoint();
        if !path.exists() {
            return Err(missing(format!(
                "denoiser checkpoint {} not found; run `promptloop train-diffusion` first",
                path.display()
            )));
        }
        let ck: DenoiserCheckpoint = checkpoint::load(&path)?;
        if ck.schedule != cfg.schedule || ck.mixture != cfg.dataset || ck.vocab != cfg.vocabulary()? {
            return Err(invalid(format!(
                "denoiser checkpoint {} was trained with a different schedule, dataset or vocabulary",
                path.display()
            )));
        }
        Ok(Self {
            dataset: cfg.dataset()?,
            vocab: ck.vocab,
            schedule: cfg.schedule.build()?,
            reward: cfg.reward_fn()?,
            queries: cfg.queries()?,
            denoiser: ck.params,
        })
    }

    pub fn env(&self, cfg: &ExperimentConfig) -> RolloutEnv<'_> {
        self.env_with(cfg, &self.denoiser)
    }

    pub fn env_with<'a>(&'a self, cfg: &ExperimentConfig, denoiser: &'a DenoiserParams) -> RolloutEnv<'a> {
        RolloutEnv { denoiser, schedule: &self.schedule, sampler: cfg.sampler, reward: &self.reward, record_trajectory: false }
    }
}

fn root(cfg: &ExperimentConfig) -> RandomSource {
    RandomSource::new(cfg.seed)
}

fn elapsed(t0: Instant) -> String {
    format!("{:.3}", t0.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------- denoiser

#[derive(Debug, Serialize)]
struct Fidelity {
    samples_per_mode: usize,
    radius: f64,
    hit_rate: f64,
    per_mode: Vec<f64>,
}

pub fn train_diffusion(cfg: &ExperimentConfig) -> Result<()> {
    let dir = StageDir::create(cfg.denoiser_dir(), "train-diffusion", cfg)?;
    let dataset = cfg.dataset()?;
    let vocab = cfg.vocabulary()?;
    let schedule = cfg.schedule.build()?;
    let t0 = Instant::now();
    let trained = train_denoiser(&dataset, &vocab, &schedule, &cfg.denoiser, &root(cfg).split("denoiser"))?;
    let train_secs = elapsed(t0);

    let ck_path = cfg.denoiser_checkpoint();
    if let Some(parent) = ck_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let ck = DenoiserCheckpoint { schedule: cfg.schedule, mixture: cfg.dataset, vocab: vocab.clone(), params: trained.params };
    checkpoint::save(&ck_path, &ck)?;

    let mut w = csv_writer(&dir.file("loss.csv"))?;
    w.write_record(["run_id", "stage", "step", "loss"])?;
    for p in &trained.loss_curve {
        w.write_record([dir.run_id.as_str(), "denoiser", &p.step.to_string(), &num(p.loss)])?;
    }
    w.flush()?;

    // fraction of full-strength samples landing within 0.5 of their mode
    let per = 200;
    let frng = root(cfg).split("fidelity");
    let per_mode: Vec<f64> = (0..dataset.centers().len())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let prompt = Prompt::new(vec![vocab.mode(k); vocab.prompt_len()], &vocab)?;
            let mut hits = 0;
            for i in 0..per {
                let mut rng = frng.split_indexed("mode", k as u64).split_indexed("sample", i as u64);
                let x = sample_with_prompt(&ck.params, &prompt, &schedule, cfg.sampler, &mut rng)?;
                hits += (x.dist(&dataset.center(k)) <= 0.5) as usize;
            }
            Ok(hits as f64 / per as f64)
        })
        .collect::<Result<_>>()?;
    let hit_rate = per_mode.iter().sum::<f64>() / per_mode.len() as f64;
    write_json(&dir.file("fidelity.json"), &Fidelity { samples_per_mode: per, radius: 0.5, hit_rate, per_mode })?;

    let mut t = csv_writer(&dir.file("timing.csv"))?;
    t.write_record(["run_id", "stage", "index", "seconds"])?;
    t.write_record([dir.run_id.as_str(), "denoiser", "total", &train_secs])?;
    t.flush()?;

    let final_loss = trained.loss_curve.last().map(|p| p.loss).unwrap_or(trained.initial_loss);
    println!(
        "denoiser: {} steps, final loss {final_loss:.4}, in-mode hit rate {:.3}; checkpoint {}",
        cfg.denoiser.steps,
        hit_rate,
        ck_path.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ policy

const METRIC_HEADER: [&str; 15] = [
    "run_id",
    "stage",
    "update",
    "mean_reward",
    "min_reward",
    "max_reward",
    "mean_alignment",
    "mean_length_penalty",
    "mean_format",
    "mean_kl",
    "advantage_std",
    "loss",
    "clip_fraction",
    "skipped_groups",
    "regime",
];

fn metric_row(run_id: &str, regime: Regime, m: &UpdateMetrics) -> Vec<String> {
    vec![
        run_id.to_string(),
        "policy".into(),
        m.update.to_string(),
        num(m.mean_reward),
        num(m.min_reward),
        num(m.max_reward),
        num(m.mean_alignment),
        num(m.mean_length_penalty),
        num(m.mean_format),
        num(m.mean_kl),
        num(m.advantage_std),
        num(m.loss),
        num(m.clip_fraction),
        m.skipped_groups.to_string(),
        regime_name(regime).into(),
    ]
}

/// Keep rows of an existing CSV whose `update`/`index` column is below `limit`.
fn surviving_rows(path: &Path, column: &str, limit: usize) -> Result<Vec<csv::StringRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let idx = r.headers()?.iter().position(|h| h == column).context("metrics file lacks an update column")?;
    let mut keep = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.get(idx).and_then(|v| v.parse::<usize>().ok()).is_some_and(|u| u < limit) {
            keep.push(rec);
        }
    }
    Ok(keep)
}

/// The config with everything that cannot affect policy training reset, so that
/// a resumed run may change evaluation settings, output paths or the update budget.
fn training_fingerprint(cfg: &ExperimentConfig) -> Result<String> {
    let d = ExperimentConfig::default();
    let mut c = cfg.clone();
    c.out = d.out;
    c.eval = d.eval;
    c.sweep = d.sweep;
    c.diffusion_rl = d.diffusion_rl;
    c.paths.policy = None;
    c.grpo.updates = 0;
    c.to_toml()
}

pub fn initial_policy(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<PolicyParams> {
    Ok(PolicyParams::init(cfg.policy.arch, vocab, cfg.x_scale(), &mut root(cfg).split("policy-init"))?)
}

/// Train (or resume) the policy for `cfg.grpo.regime`. Returns the final trainer state.
pub fn train_policy_stage(cfg: &ExperimentConfig, restart: bool) -> Result<TrainerState> {
    let regime = cfg.grpo.regime;
    let world = World::load(cfg)?;
    let stage_path = cfg.policy_dir(regime);
    let ck_path = cfg.policy_checkpoint(regime);

    let mut state = None;
    if ck_path.exists() && !restart {
        let previous = fs::read_to_string(stage_path.join("config.toml"))
            .ok()
            .and_then(|t| ExperimentConfig::parse(&t).ok())
            .map(|c| training_fingerprint(&c))
            .transpose()?;
        if previous != Some(training_fingerprint(cfg)?) {
            return Err(invalid(format!(
                "{} exists but was produced by a different config; pass --restart to train from scratch",
                ck_path.display()
            )));
        }
        let ck: PolicyCheckpoint = checkpoint::load(&ck_path)?;
        if ck.regime != regime || ck.vocab != world.vocab {
            return Err(invalid(format!("{} holds a policy for another regime or vocabulary", ck_path.display())));
        }
        state = Some(ck.trainer);
    }
    let resumed = state.as_ref().map_or(0, |s| s.next_update);
    let state = match state {
        Some(s) => s,
        None => TrainerState::fresh(initial_policy(cfg, &world.vocab)?, cfg.grpo.lr),
    };

    let dir = StageDir::create(stage_path, "train-policy", cfg)?;
    if let Some(parent) = ck_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let metrics_path = dir.file("metrics.csv");
    let timing_path = dir.file("timing.csv");
    let kept = surviving_rows(&metrics_path, "update", resumed)?;
    let kept_timing = surviving_rows(&timing_path, "index", resumed)?;
    let mut metrics = csv_writer(&metrics_path)?;
    metrics.write_record(METRIC_HEADER)?;
    for r in &kept {
        metrics.write_record(r)?;
    }
    metrics.flush()?;
    let mut timing = csv_writer(&timing_path)?;
    timing.write_record(["run_id", "stage", "index", "seconds"])?;
    for r in &kept_timing {
        timing.write_record(r)?;
    }
    timing.flush()?;

    if resumed > 0 {
        eprintln!("resuming {} at update {resumed}", regime_name(regime));
    }
    let task = PolicyTask { env: world.env(cfg), vocab: &world.vocab, queries: &world.queries };
    let every = cfg.policy.checkpoint_every;
    let total = cfg.grpo.updates;
    let t0 = Instant::now();
    let mut last_report = Instant::now();
    let (state, _) = train_policy(&task, state, &cfg.grpo, &root(cfg).split("policy-train"), |m, st| {
        metrics.write_record(metric_row(&dir.run_id, regime, m)).map_err(std::io::Error::from)?;
        metrics.flush()?;
        timing
            .write_record([dir.run_id.as_str(), "policy", &m.update.to_string(), &elapsed(t0)])
            .map_err(std::io::Error::from)?;
        timing.flush()?;
        let done = m.update + 1;
        if done % every == 0 || done == total {
            checkpoint::save(&ck_path, &PolicyCheckpoint { vocab: world.vocab.clone(), regime, trainer: st.clone() })?;
        }
        if last_report.elapsed().as_secs() >= 10 || done == total {
            eprintln!("  {} update {done}/{total}: mean reward {:.4}", regime_name(regime), m.mean_reward);
            last_report = Instant::now();
        }
        Ok(())
    })?;
    // a run that was already complete never calls the hook; make sure the checkpoint exists
    if !ck_path.exists() {
        checkpoint::save(&ck_path, &PolicyCheckpoint { vocab: world.vocab.clone(), regime, trainer: state.clone() })?;
    }
    println!("policy ({}): {} updates; checkpoint {}", regime_name(regime), state.next_update, ck_path.display());
    Ok(state)
}

/// Load a trained policy, training it first when `train_missing` is set.
fn policy_for(cfg: &ExperimentConfig, regime: Regime, train_missing: bool) -> Result<(PolicyParams, PathBuf)> {
    let path = cfg.policy_checkpoint(regime);
    let done = if path.exists() { checkpoint::load::<PolicyCheckpoint>(&path)?.trainer.next_update } else { 0 };
    if !train_missing {
        if !path.exists() {
            return Err(missing(format!(
                "policy checkpoint {} not found; run `promptloop train-policy --mode {}` first",
                path.display(),
                regime_name(regime).replace('_', "-")
            )));
        }
        if done < cfg.grpo.updates {
            eprintln!("warning: {} holds {done} of {} updates", path.display(), cfg.grpo.updates);
        }
    } else if done < cfg.grpo.updates {
        let mut sub = cfg.clone();
        sub.grpo.regime = regime;
        if regime != cfg.grpo.regime {
            sub.paths.policy = None;
        }
        train_policy_stage(&sub, false)?;
    }
    let ck: PolicyCheckpoint = checkpoint::load(&path)?;
    if ck.regime != regime {
        return Err(invalid(format!("{} holds a {} policy", path.display(), regime_name(ck.regime))));
    }
    Ok((ck.trainer.params, path))
}

// -------------------------------------------------------------------- eval

/// What an evaluation run needs besides the world.
pub enum Actor<'a> {
    None,
    Policy(&'a PolicyParams),
    /// One fine-tuned denoiser per query, in query order.
    Tuned(&'a [DenoiserParams]),
}

pub fn episode_rng(cfg: &ExperimentConfig, i: usize) -> RandomSource {
    root(cfg).split("eval").split_indexed("episode", i as u64)
}

/// Run `episodes` evaluation episodes. Episode `i` uses query `i mod |Q|` and a
/// fixed random stream, so every mode sees identical noise.
pub fn evaluate(
    cfg: &ExperimentConfig,
    world: &World,
    mode: EvalMode,
    refine_steps: usize,
    episodes: usize,
    actor: &Actor<'_>,
) -> Result<Vec<EpisodeRecord>> {
    let horizon = world.schedule.steps();
    let refine = inference_schedule(horizon, if mode.single_refinement() { 1 } else { refine_steps })?;
    let env = world.env(cfg);
    let controller = NearestModeController { dataset: &world.dataset, vocab: &world.vocab };
    let one = |i: usize| -> Result<EpisodeRecord> {
        let qi = i % world.queries.len();
        let q = &world.queries[qi];
        let rng = episode_rng(cfg, i);
        let params = || match actor {
            Actor::Policy(p) => Ok(*p),
            _ => Err(invalid(format!("mode {} needs a policy", mode.name()))),
        };
        let ep = match mode {
            EvalMode::Identity => identity_rollout(&env, q, &rng)?,
            EvalMode::Feedforward => feedforward_rollout(&env, params()?, &world.vocab, q, &rng)?,
            EvalMode::ClosedLoop => policy_rollout(&env, params()?, &world.vocab, FeedbackMode::On, q, &refine, &rng)?,
            EvalMode::Blind => policy_rollout(&env, params()?, &world.vocab, FeedbackMode::Off, q, &refine, &rng)?,
            EvalMode::Precomputed => {
                policy_rollout(&env, params()?, &world.vocab, FeedbackMode::Precomputed, q, &refine, &rng)?
            }
            EvalMode::Controller => rollout(&env, &controller, q, &refine, &rng, RolloutKind::Controller)?,
            EvalMode::DiffusionRl => {
                let Actor::Tuned(tuned) = actor else {
                    return Err(invalid("diffusion-rl mode needs fine-tuned denoisers"));
                };
                let mut ep = identity_rollout(&world.env_with(cfg, &tuned[qi]), q, &rng)?;
                ep.kind = RolloutKind::DiffusionRl;
                ep
            }
        };
        Ok(ep)
    };
    (0..episodes).into_par_iter().map(one).collect()
}

/// Policy invocations that happen inside the sampling loop.
fn policy_calls(mode: EvalMode, ep: &EpisodeRecord) -> usize {
    match mode {
        EvalMode::ClosedLoop | EvalMode::Blind | EvalMode::Feedforward => ep.events.len(),
        _ => 0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub mode: EvalMode,
    pub refine_steps: usize,
    pub episodes: usize,
    pub seed: u64,
    pub reward_spec: &'static str,
    pub policy_checkpoint: Option<PathBuf>,
    pub reward: Summary,
    pub alignment: Summary,
    pub length_penalty: Summary,
    pub format: Summary,
    pub policy_calls_in_loop: usize,
}

/// Write episodes.csv, episodes.jsonl and summary.json into `dir`.
pub fn write_eval(
    cfg: &ExperimentConfig,
    world: &World,
    dir: &StageDir,
    mode: EvalMode,
    refine_steps: usize,
    policy_checkpoint: Option<PathBuf>,
    eps: &[EpisodeRecord],
) -> Result<EvalSummary> {
    let mut w = csv_writer(&dir.file("episodes.csv"))?;
    w.write_record([
        "run_id",
        "episode",
        "query",
        "reward",
        "alignment",
        "length_penalty",
        "format",
        "x0_x",
        "x0_y",
        "final_prompt",
        "refinements",
        "policy_calls",
    ])?;
    for (i, ep) in eps.iter().enumerate() {
        w.write_record([
            dir.run_id.clone(),
            i.to_string(),
            world.vocab.render(ep.query.prompt()),
            num(ep.reward.total),
            num(ep.reward.alignment),
            num(ep.reward.length_penalty),
            num(ep.reward.format),
            num(ep.x0.x()),
            num(ep.x0.y()),
            world.vocab.render(&ep.final_prompt),
            ep.events.len().to_string(),
            policy_calls(mode, ep).to_string(),
        ])?;
    }
    w.flush()?;
    write_jsonl(eps, std::io::BufWriter::new(fs::File::create(dir.file("episodes.jsonl"))?))?;

    let resamples = cfg.eval.bootstrap_resamples;
    let brng = root(cfg).split("bootstrap");
    let col = |f: fn(&EpisodeRecord) -> f64, label: &str| {
        let v: Vec<f64> = eps.iter().map(f).collect();
        summarize_with(&v, resamples, &mut brng.split(label))
    };
    let summary = EvalSummary {
        mode,
        refine_steps: if mode.single_refinement() { 1 } else { refine_steps },
        episodes: eps.len(),
        seed: cfg.seed,
        reward_spec: cfg.reward.spec.name(),
        policy_checkpoint,
        reward: col(|e| e.reward.total, "reward"),
        alignment: col(|e| e.reward.alignment, "alignment"),
        length_penalty: col(|e| e.reward.length_penalty, "length_penalty"),
        format: col(|e| e.reward.format, "format"),
        policy_calls_in_loop: eps.iter().map(|e| policy_calls(mode, e)).sum(),
    };
    write_json(&dir.file("summary.json"), &summary)?;
    Ok(summary)
}

fn tuned_denoisers(cfg: &ExperimentConfig, world: &World) -> Result<Vec<DenoiserParams>> {
    let dir = StageDir::create(cfg.out.join("diffusion_rl"), "diffusion-rl", cfg)?;
    let mut out = Vec::with_capacity(world.queries.len());
    for (qi, q) in world.queries.iter().enumerate() {
        let path = dir.file(&format!("q{qi}.json"));
        if path.exists() {
            out.push(checkpoint::load::<DenoiserCheckpoint>(&path)?.params);
            continue;
        }
        let rng = root(cfg).split("diffusion-rl").split_indexed("query", qi as u64);
        let (params, metrics) = diffusion_rl_finetune(&world.denoiser, &world.schedule, &world.reward, q, &cfg.diffusion_rl, &rng)?;
        let mut w = csv_writer(&dir.file(&format!("metrics_q{qi}.csv")))?;
        w.write_record(["run_id", "stage", "query", "update", "mean_reward", "min_reward", "max_reward", "loss"])?;
        for m in &metrics {
            w.write_record([
                dir.run_id.clone(),
                "diffusion_rl".into(),
                world.vocab.render(q.prompt()),
                m.update.to_string(),
                num(m.mean_reward),
                num(m.min_reward),
                num(m.max_reward),
                num(m.loss),
            ])?;
        }
        w.flush()?;
        let ck = DenoiserCheckpoint { schedule: cfg.schedule, mixture: cfg.dataset, vocab: world.vocab.clone(), params };
        checkpoint::save(&path, &ck)?;
        eprintln!("  diffusion-rl fine-tuned for {}", world.vocab.render(q.prompt()));
        out.push(ck.params);
    }
    Ok(out)
}

fn eval_dir_name(mode: EvalMode, refine_steps: usize) -> String {
    if mode.single_refinement() {
        mode.name().replace('-', "_")
    } else {
        format!("{}_nr{refine_steps}", mode.name().replace('-', "_"))
    }
}

/// Evaluate one mode into `dir`, loading whatever the mode needs.
fn eval_into(
    cfg: &ExperimentConfig,
    world: &World,
    mode: EvalMode,
    refine_steps: usize,
    dir_path: PathBuf,
    train_missing: bool,
) -> Result<(EvalSummary, Vec<f64>)> {
    let policy = match mode.regime() {
        Some(r) => Some(policy_for(cfg, r, train_missing)?),
        None => None,
    };
    let tuned = if mode == EvalMode::DiffusionRl { tuned_denoisers(cfg, world)? } else { Vec::new() };
    let actor = match (&policy, mode) {
        (Some((p, _)), _) => Actor::Policy(p),
        (None, EvalMode::DiffusionRl) => Actor::Tuned(&tuned),
        _ => Actor::None,
    };
    let eps = evaluate(cfg, world, mode, refine_steps, cfg.eval.episodes, &actor)?;
    let dir = StageDir::create(dir_path, "eval", cfg)?;
    let summary = write_eval(cfg, world, &dir, mode, refine_steps, policy.map(|(_, p)| p), &eps)?;
    Ok((summary, eps.iter().map(|e| e.reward.total).collect()))
}

fn fmt_summary(s: &Summary) -> String {
    match (s.mean, s.ci95) {
        (Some(m), Some(ci)) => format!("{m:.4} [{:.4}, {:.4}]", ci.lo, ci.hi),
        (Some(m), None) => format!("{m:.4}"),
        _ => "n/a".into(),
    }
}

pub fn eval(cfg: &ExperimentConfig) -> Result<EvalSummary> {
    let world = World::load(cfg)?;
    let mode = cfg.eval.mode;
    let dir = cfg.out.join("eval").join(eval_dir_name(mode, cfg.eval.refine_steps));
    let (summary, _) = eval_into(cfg, &world, mode, cfg.eval.refine_steps, dir.clone(), false)?;
    println!(
        "eval {} (N_R={}, {} episodes): reward {}; written to {}",
        mode.name(),
        summary.refine_steps,
        summary.episodes,
        fmt_summary(&summary.reward),
        dir.display()
    );
    Ok(summary)
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Serialize)]
struct SweepRow {
    refine_steps: usize,
    reward: Summary,
    /// Paired difference to the first setting.
    delta_vs_first: Summary,
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let world = World::load(cfg)?;
    let mode = cfg.eval.mode;
    if cfg.sweep.refine_steps.is_empty() {
        return Err(invalid("sweep.refine_steps is empty"));
    }
    let base = cfg.out.join(format!("sweep_{}", mode.name().replace('-', "_")));
    let dir = StageDir::create(base.clone(), "sweep", cfg)?;
    let mut rows = Vec::new();
    let mut first: Option<Vec<f64>> = None;
    let brng = root(cfg).split("sweep-bootstrap");
    for &nr in &cfg.sweep.refine_steps {
        let (s, rewards) = eval_into(cfg, &world, mode, nr, base.join(format!("nr{nr}")), false)?;
        let reference = first.get_or_insert_with(|| rewards.clone());
        let delta = paired_difference(&rewards, reference, &mut brng.split_indexed("nr", nr as u64));
        println!("sweep {} N_R={nr}: reward {}; vs first {}", mode.name(), fmt_summary(&s.reward), fmt_summary(&delta));
        rows.push(SweepRow { refine_steps: nr, reward: s.reward, delta_vs_first: delta });
    }
    let mut w = csv_writer(&dir.file("sweep.csv"))?;
    w.write_record(["run_id", "mode", "refine_steps", "episodes", "mean", "std", "ci_lo", "ci_hi", "delta_mean", "delta_ci_lo", "delta_ci_hi"])?;
    for r in &rows {
        w.write_record([
            dir.run_id.clone(),
            mode.name().into(),
            r.refine_steps.to_string(),
            r.reward.n.to_string(),
            opt(r.reward.mean),
            opt(r.reward.std),
            opt(r.reward.ci95.map(|c| c.lo)),
            opt(r.reward.ci95.map(|c| c.hi)),
            opt(r.delta_vs_first.mean),
            opt(r.delta_vs_first.ci95.map(|c| c.lo)),
            opt(r.delta_vs_first.ci95.map(|c| c.hi)),
        ])?;
    }
    w.flush()?;
    write_json(&dir.file("sweep.json"), &rows)?;
    Ok(())
}

// ------------------------------------------------------------------ ablate

/// The incremental ladder, in order.
pub const LADDER: [&str; 5] = [
    "prompt only",
    "+ policy model",
    "+ GRPO training",
    "+ multiple improvement",
    "+ visual feedback",
];

#[derive(Debug, Serialize)]
pub struct AblationRow {
    pub rung: usize,
    pub name: &'static str,
    pub mode: EvalMode,
    pub trained: bool,
    pub refine_steps: usize,
    pub reward: Summary,
    pub delta_vs_identity: Summary,
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let world = World::load(cfg)?;
    let base = cfg.out.join("ablate");
    let dir = StageDir::create(base.clone(), "ablate", cfg)?;
    let nr = cfg.eval.refine_steps;
    let episodes = cfg.eval.episodes;

    let untrained = initial_policy(cfg, &world.vocab)?;
    let ff = policy_for(cfg, Regime::FeedForward, true)?.0;
    let blind = policy_for(cfg, Regime::Blind, true)?.0;
    let closed = policy_for(cfg, Regime::ClosedLoop, true)?.0;
    let rungs: [(EvalMode, Actor<'_>, bool); 5] = [
        (EvalMode::Identity, Actor::None, false),
        (EvalMode::Feedforward, Actor::Policy(&untrained), false),
        (EvalMode::Feedforward, Actor::Policy(&ff), true),
        (EvalMode::Blind, Actor::Policy(&blind), true),
        (EvalMode::ClosedLoop, Actor::Policy(&closed), true),
    ];
    let brng = root(cfg).split("ablate-bootstrap");
    let mut rows = Vec::new();
    let mut identity: Vec<f64> = Vec::new();
    for (i, (mode, actor, trained)) in rungs.iter().enumerate() {
        let eps = evaluate(cfg, &world, *mode, nr, episodes, actor)?;
        let rung_dir = StageDir::create(base.join(format!("rung{}", i + 1)), "ablate", cfg)?;
        let s = write_eval(cfg, &world, &rung_dir, *mode, nr, None, &eps)?;
        let rewards: Vec<f64> = eps.iter().map(|e| e.reward.total).collect();
        if i == 0 {
            identity = rewards.clone();
        }
        let delta = paired_difference(&rewards, &identity, &mut brng.split_indexed("rung", i as u64));
        println!("ablate {} ({}): reward {}; vs identity {}", LADDER[i], mode.name(), fmt_summary(&s.reward), fmt_summary(&delta));
        rows.push(AblationRow {
            rung: i + 1,
            name: LADDER[i],
            mode: *mode,
            trained: *trained,
            refine_steps: s.refine_steps,
            reward: s.reward,
            delta_vs_identity: delta,
        });
    }
    let mut w = csv_writer(&dir.file("ablation.csv"))?;
    w.write_record([
        "run_id", "rung", "name", "mode", "trained", "refine_steps", "episodes", "mean", "std", "ci_lo", "ci_hi",
        "delta_mean", "delta_ci_lo", "delta_ci_hi",
    ])?;
    for r in &rows {
        w.write_record([
            dir.run_id.clone(),
            r.rung.to_string(),
            r.name.into(),
            r.mode.name().into(),
            r.trained.to_string(),
            r.refine_steps.to_string(),
            r.reward.n.to_string(),
            opt(r.reward.mean),
            opt(r.reward.std),
            opt(r.reward.ci95.map(|c| c.lo)),
            opt(r.reward.ci95.map(|c| c.hi)),
            opt(r.delta_vs_identity.mean),
            opt(r.delta_vs_identity.ci95.map(|c| c.lo)),
            opt(r.delta_vs_identity.ci95.map(|c| c.hi)),
        ])?;
    }
    w.flush()?;
    write_json(&dir.file("ablation.json"), &rows)?;
    Ok(rows)
}
