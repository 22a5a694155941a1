//! Summary statistics with percentile-bootstrap confidence intervals.

use serde::{Deserialize, Serialize};

use crate::numerics::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn excludes_zero(&self) -> bool {
        !self.contains(0.0)
    }
}

/// Mean, population std and bootstrap CI of a sample. Empty samples give `None` fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub ci95: Option<Interval>,
}

pub const DEFAULT_RESAMPLES: usize = 2000;

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn std_pop(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

/// Percentile bootstrap interval of the mean at the given confidence level.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, rng: &mut RandomSource) -> Option<Interval> {
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.below(n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * resamples as f64).floor() as usize).min(resamples - 1);
    Some(Interval { lo: means[idx(alpha)], hi: means[idx(1.0 - alpha)] })
}

pub fn summarize(values: &[f64], rng: &mut RandomSource) -> Summary {
    summarize_with(values, DEFAULT_RESAMPLES, rng)
}

pub fn summarize_with(values: &[f64], resamples: usize, rng: &mut RandomSource) -> Summary {
    Summary {
        n: values.len(),
        mean: mean(values),
        std: std_pop(values),
        ci95: bootstrap_ci(values, resamples, 0.95, rng),
    }
}

/// Summary of `a[i] − b[i]` for paired samples (shared seeds).
pub fn paired_difference(a: &[f64], b: &[f64], rng: &mut RandomSource) -> Summary {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    summarize(&d, rng)
}
