//! Closed-loop prompt refinement for a toy conditional diffusion model.

pub mod baselines;
pub mod checkpoint;
pub mod diffusion;
pub mod env;
pub mod grpo;
mod error;
pub mod numerics;
pub mod policy;
pub mod prompt;
pub mod rewards;
pub mod stats;

pub use error::{Error, Result};
