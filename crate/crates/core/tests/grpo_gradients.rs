use promptloop_core::diffusion::{MixtureDataset, MixtureOracle, MixtureSpec, ScheduleSpec, SamplerKind};
use promptloop_core::env::{rollout_group, sample_training_schedule, PolicyActor, RolloutEnv, RolloutKind};
use promptloop_core::grpo::{grpo_loss_and_grad, GroupBatch, KlDirection, ObjectiveConfig};
use promptloop_core::numerics::{finite_diff_check, flatten, unflatten_into, RandomSource};
use promptloop_core::policy::{action_logprob_and_grad, Feedback, PolicyArch, PolicyParams};
use promptloop_core::prompt::Vocabulary;
use promptloop_core::rewards::{RewardFn, RewardSpec};

const SMALL: PolicyArch = PolicyArch { hidden: 6, layers: 1, embed_dim: 3, time_dim: 4, embed_init_std: 1.0 };

struct Fixture {
    dataset: MixtureDataset,
    vocab: Vocabulary,
    schedule: promptloop_core::diffusion::NoiseSchedule,
}

fn fixture() -> Fixture {
    Fixture {
        dataset: MixtureDataset::new(MixtureSpec::default()).unwrap(),
        vocab: Vocabulary::desk_default(),
        schedule: ScheduleSpec::default().build().unwrap(),
    }
}

fn batches(fx: &Fixture, params: &PolicyParams, feedback: Feedback, seed: u64, n_groups: usize) -> Vec<GroupBatch> {
    let oracle = MixtureOracle { dataset: &fx.dataset, vocab: &fx.vocab, schedule: &fx.schedule };
    let reward = RewardFn::new(RewardSpec::composite_default(), 1.0, fx.dataset.clone(), fx.vocab.clone()).unwrap();
    let env = RolloutEnv { denoiser: &oracle, schedule: &fx.schedule, sampler: SamplerKind::Ddpm, reward: &reward, record_trajectory: false };
    let actor = PolicyActor::new(params, &fx.vocab, feedback);
    let mut queries = fx.vocab.mode_queries();
    queries.extend(fx.vocab.ambiguous_queries());
    let root = RandomSource::new(seed);
    (0..n_groups)
        .map(|b| {
            let mut r = root.split_indexed("query", b as u64);
            let q = &queries[r.below(queries.len())];
            let sched = sample_training_schedule(50, 2, &mut r).unwrap();
            let eps = rollout_group(&env, &actor, q, &[sched], 4, &r.split("group"), RolloutKind::ClosedLoop).unwrap();
            GroupBatch::new(eps, feedback, 1e-8).unwrap()
        })
        .collect()
}

fn perturbed(params: &PolicyParams, scale: f64, seed: u64) -> PolicyParams {
    let mut rng = RandomSource::new(seed);
    let mut flat = flatten(params);
    flat.iter_mut().for_each(|v| *v += scale * rng.normal());
    let mut out = params.clone();
    unflatten_into(&mut out, &flat);
    out
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let fx = fixture();
    let mut failures = Vec::new();
    for trial in 0..100u64 {
        let mut init_rng = RandomSource::new(1000 + trial);
        let old = perturbed(&PolicyParams::init(SMALL, &fx.vocab, 0.2, &mut init_rng).unwrap(), 0.5, 2000 + trial);
        let feedback = if trial % 2 == 0 { Feedback::Visible } else { Feedback::Masked };
        let data = batches(&fx, &old, feedback, 3000 + trial, 2);
        let cfg = ObjectiveConfig {
            clip_eps: 0.2,
            kl_coef: if trial % 3 == 0 { 0.0 } else { 0.05 },
            kl_direction: if trial % 4 < 2 { KlDirection::OldNew } else { KlDirection::NewOld },
        };
        let start = perturbed(&old, 0.05, 4000 + trial);
        let check = finite_diff_check(
            |flat| {
                let mut p = start.clone();
                unflatten_into(&mut p, flat);
                let (loss, grads) = grpo_loss_and_grad(&p, &data, &cfg).unwrap();
                (loss.loss, flatten(&grads))
            },
            &flatten(&start),
            1e-4,
        );
        if !check.passed {
            failures.push((trial, check));
        }
    }
    // ReLU kinks and the clip boundary make a handful of coordinates non-differentiable.
    assert!(failures.len() <= 2, "{} of 100 instances failed: {:?}", failures.len(), &failures[..failures.len().min(3)]);
}

#[test]
fn single_iteration_gradient_is_reinforce() {
    let fx = fixture();
    let params = perturbed(&PolicyParams::init(SMALL, &fx.vocab, 0.2, &mut RandomSource::new(5)).unwrap(), 0.3, 6);
    let data = batches(&fx, &params, Feedback::Visible, 7, 3);
    let cfg = ObjectiveConfig { clip_eps: 0.2, kl_coef: 0.01, kl_direction: KlDirection::OldNew };
    let (loss, grads) = grpo_loss_and_grad(&params, &data, &cfg).unwrap();
    assert!(loss.kl.abs() < 1e-12);
    assert_eq!(loss.clip_fraction, 0.0);
    let n_tokens: usize = data.iter().map(|b| b.num_events()).sum::<usize>() * fx.vocab.prompt_len();
    let mut expected = vec![0.0; grads_len(&params)];
    for b in &data {
        for (ep, adv) in b.episodes.iter().zip(&b.advantages) {
            for ev in &ep.events {
                let (_, g) = action_logprob_and_grad(&params, &ev.state, &ev.action, Feedback::Visible).unwrap();
                for (e, gi) in expected.iter_mut().zip(flatten(&g)) {
                    *e -= adv * gi / n_tokens as f64;
                }
            }
        }
    }
    for (a, e) in flatten(&grads).iter().zip(&expected) {
        assert!((a - e).abs() <= 1e-10 * (1.0 + e.abs()), "{a} vs {e}");
    }
}

fn grads_len(p: &PolicyParams) -> usize {
    flatten(p).len()
}

#[test]
fn zero_advantages_leave_only_the_kl_gradient() {
    let fx = fixture();
    let params = PolicyParams::init(SMALL, &fx.vocab, 0.2, &mut RandomSource::new(9)).unwrap();
    let mut data = batches(&fx, &params, Feedback::Visible, 10, 2);
    for b in &mut data {
        b.advantages.iter_mut().for_each(|a| *a = 0.0);
    }
    let cfg = ObjectiveConfig { clip_eps: 0.2, kl_coef: 0.0, kl_direction: KlDirection::OldNew };
    let moved = perturbed(&params, 0.1, 11);
    let (loss, grads) = grpo_loss_and_grad(&moved, &data, &cfg).unwrap();
    assert_eq!(loss.loss, 0.0);
    assert!(flatten(&grads).iter().all(|g| *g == 0.0));
}
