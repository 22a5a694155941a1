use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::numerics::RandomSource;

/// Refinement timesteps `𝓡 ⊆ {1..T}`, stored in descending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefinementSchedule {
    steps: Vec<usize>,
}

fn check(horizon: usize, n: usize) -> Result<()> {
    if n == 0 || n > horizon {
        return Err(config_err(format!("refinement count {n} must be in 1..={horizon}")));
    }
    Ok(())
}

impl RefinementSchedule {
    /// Any non-empty set of distinct timesteps in `1..=horizon`; order of `steps` is irrelevant.
    pub fn new(mut steps: Vec<usize>, horizon: usize) -> Result<Self> {
        steps.sort_unstable_by(|a, b| b.cmp(a));
        steps.dedup();
        if steps.is_empty() {
            return Err(config_err("refinement schedule must not be empty"));
        }
        if steps[0] > horizon || *steps.last().expect("non-empty") == 0 {
            return Err(config_err(format!("refinement timesteps must lie in 1..={horizon}")));
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.steps.binary_search_by(|s| t.cmp(s)).is_ok()
    }

    /// Timesteps from high to low.
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }
}

/// Uniform random `n`-subset of `1..=horizon` (partial Fisher–Yates).
pub fn sample_training_schedule(horizon: usize, n: usize, rng: &mut RandomSource) -> Result<RefinementSchedule> {
    check(horizon, n)?;
    let mut pool: Vec<usize> = (1..=horizon).collect();
    for i in 0..n {
        let j = i + rng.below(horizon - i);
        pool.swap(i, j);
    }
    pool.truncate(n);
    RefinementSchedule::new(pool, horizon)
}

/// Evenly spaced `{T − round(i·T/n) : i = 0..n}`; always contains `T`.
///
/// Consecutive values differ by `T/n ≥ 1` before rounding, so rounding never merges two of them.
pub fn inference_schedule(horizon: usize, n: usize) -> Result<RefinementSchedule> {
    check(horizon, n)?;
    let steps = (0..n)
        .map(|i| horizon - (i as f64 * horizon as f64 / n as f64).round() as usize)
        .collect();
    RefinementSchedule::new(steps, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inference_examples() {
        assert_eq!(inference_schedule(10, 1).unwrap().steps(), &[10]);
        assert_eq!(inference_schedule(10, 2).unwrap().steps(), &[10, 5]);
        assert_eq!(inference_schedule(10, 10).unwrap().steps(), &(1..=10).rev().collect::<Vec<_>>()[..]);
        assert_eq!(inference_schedule(50, 5).unwrap().steps(), &[50, 40, 30, 20, 10]);
        assert!(inference_schedule(10, 11).is_err());
        assert!(inference_schedule(10, 0).is_err());
    }

    #[test]
    fn training_full_set() {
        let s = sample_training_schedule(7, 7, &mut RandomSource::new(1)).unwrap();
        assert_eq!(s.steps(), &[7, 6, 5, 4, 3, 2, 1]);
        assert!(sample_training_schedule(4, 5, &mut RandomSource::new(1)).is_err());
    }

    #[test]
    fn single_step_frequencies_uniform() {
        let mut rng = RandomSource::new(2);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_training_schedule(4, 1, &mut rng).unwrap().steps()[0] - 1] += 1;
        }
        let se = (0.25 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn pair_frequencies_uniform() {
        let mut rng = RandomSource::new(3);
        let n = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let s = sample_training_schedule(10, 2, &mut rng).unwrap();
            *counts.entry((s.steps()[0], s.steps()[1])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 45);
        let p = 1.0 / 45.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for (&pair, &c) in &counts {
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * se, "pair {pair:?}: {c}");
        }
    }

    proptest! {
        #[test]
        fn training_schedule_well_formed(horizon in 1usize..60, frac in 0.0f64..1.0, seed in 0u64..1000) {
            let n = 1 + ((horizon - 1) as f64 * frac) as usize;
            let s = sample_training_schedule(horizon, n, &mut RandomSource::new(seed)).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.steps().windows(2).all(|w| w[0] > w[1]));
            prop_assert!(s.steps().iter().all(|&t| (1..=horizon).contains(&t)));
        }

        #[test]
        fn inference_schedule_distinct_and_starts_at_horizon(horizon in 1usize..200, frac in 0.0f64..1.0) {
            let n = 1 + ((horizon - 1) as f64 * frac) as usize;
            let s = inference_schedule(horizon, n).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert_eq!(s.steps()[0], horizon);
        }
    }
}
