use serde::{Deserialize, Serialize};

use super::ParamBlocks;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Moments shaped like `params`, with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &impl ParamBlocks, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &impl ParamBlocks, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Self { lr, beta1, beta2, eps, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    fn check_shapes(&self, blocks: &[usize]) -> Result<()> {
        if blocks.len() != self.first.len()
            || blocks.iter().zip(&self.first).any(|(n, m)| *n != m.len())
        {
            return Err(config_err("Adam moments do not match the parameter shapes"));
        }
        Ok(())
    }

    /// One bias-corrected Adam update, descending along `grads`.
    pub fn step(&mut self, params: &mut impl ParamBlocks, grads: &impl ParamBlocks) -> Result<()> {
        let g_blocks = grads.blocks();
        self.check_shapes(&g_blocks.iter().map(|b| b.len()).collect::<Vec<_>>())?;
        {
            let p_lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
            self.check_shapes(&p_lens)?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut p_blocks = params.blocks_mut();
        for (bi, g) in g_blocks.iter().enumerate() {
            let p = &mut p_blocks[bi];
            let m = &mut self.first[bi];
            let v = &mut self.second[bi];
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Flat(Vec<f64>);

    impl ParamBlocks for Flat {
        fn blocks(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Flat(vec![1.0, -2.0]);
        let mut adam = AdamState::new(&p, 0.1);
        adam.step(&mut p, &Flat(vec![1.0, 1.0])).unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moments()[0].clone();
        adam.step(&mut p, &Flat(vec![0.0, 0.0])).unwrap();
        // m decays by β₁; the bias-corrected step is not exactly zero because m ≠ 0,
        // so check a fresh state for the "unchanged" property.
        for (a, b) in adam.first_moments()[0].iter().zip(&m_before) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        assert_ne!(after_first, p);

        let mut q = Flat(vec![1.0, -2.0]);
        let mut fresh = AdamState::new(&q, 0.1);
        fresh.step(&mut q, &Flat(vec![0.0, 0.0])).unwrap();
        assert_eq!(q, Flat(vec![1.0, -2.0]));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // step 1: m̂ = g, v̂ = g², update = η g / (|g| + ε) ≈ η sign(g)
        let g = [0.3, -4.0, 1e-3];
        let mut p = Flat(vec![0.0; 3]);
        let mut adam = AdamState::new(&p, 0.01);
        adam.step(&mut p, &Flat(g.to_vec())).unwrap();
        for (pi, gi) in p.0.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi + 0.01 * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = Flat(vec![0.5, 0.5]);
            let mut adam = AdamState::new(&p, 0.05);
            for k in 0..20 {
                let g = Flat(vec![(k as f64).sin(), p.0[0] - p.0[1]]);
                adam.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut p = Flat(vec![0.0; 2]);
        let mut adam = AdamState::new(&p, 0.1);
        assert!(adam.step(&mut p, &Flat(vec![1.0; 3])).is_err());
    }
}
