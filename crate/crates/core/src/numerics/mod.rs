//! Dense linear algebra, a small MLP with analytic gradients, Adam, softmax helpers,
//! a gradient checker and the seeded random source everything else draws from.

mod adam;
mod linalg;
mod mlp;
mod rng;
mod softmax;

pub use adam::AdamState;
pub use linalg::{axpy, dot, norm_sq, Matrix};
pub use mlp::{Activation, ForwardCache, Layer, MlpGrads, MlpParams};
pub use rng::RandomSource;
pub use softmax::{log_softmax, softmax};

/// A parameter set (or gradient) viewed as an ordered list of flat blocks.
///
/// Parameters and their gradients must enumerate blocks in the same order with
/// the same lengths; [`AdamState`] relies on it.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += s * other`; shapes must agree.
    fn add_scaled(&mut self, s: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.blocks();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            axpy(s, src, dst);
        }
    }
}

pub fn flatten(p: &impl ParamBlocks) -> Vec<f64> {
    p.blocks().concat()
}

/// Overwrite `p` block by block from a flat vector produced by [`flatten`].
pub fn unflatten_into(p: &mut impl ParamBlocks, flat: &[f64]) {
    let mut offset = 0;
    for b in p.blocks_mut() {
        let n = b.len();
        b.copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, flat.len(), "flat vector length does not match parameter count");
}

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Entries whose analytic and numeric magnitudes are both below this are compared
/// absolutely; both are then pure rounding noise.
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare an analytic gradient against central differences with `h = 1e-5`.
///
/// `value_and_grad` returns the function value and its analytic gradient at the
/// supplied point. The relative error of coordinate `i` is
/// `|a_i - n_i| / max(|a_i|, |n_i|, 1e-6)`.
pub fn finite_diff_check<F>(mut value_and_grad: F, params: &[f64], tolerance: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = value_and_grad(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameter count");
    let mut probe = params.to_vec();
    let mut worst = 0.0;
    let mut worst_index = None;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let (fp, _) = value_and_grad(&probe);
        probe[i] = orig - FD_STEP;
        let (fm, _) = value_and_grad(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(FD_FLOOR);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > worst || worst_index.is_none() {
            worst = err;
            worst_index = Some(i);
        }
    }
    GradCheck { max_rel_error: worst, worst_index, tolerance, passed: worst < tolerance }
}
