//! Versioned JSON checkpoints for the denoiser and the policy.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DenoiserParams, MixtureSpec, ScheduleSpec};
use crate::error::{Error, Result};
use crate::grpo::{Regime, TrainerState};
use crate::prompt::Vocabulary;

pub const FORMAT: &str = "promptloop-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

/// A frozen denoiser with everything needed to rebuild its sampling context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserCheckpoint {
    pub schedule: ScheduleSpec,
    pub mixture: MixtureSpec,
    pub vocab: Vocabulary,
    pub params: DenoiserParams,
}

/// Policy weights plus optimizer state, resumable at `trainer.next_update`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub vocab: Vocabulary,
    pub regime: Regime,
    pub trainer: TrainerState,
}

pub trait CheckpointKind: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl CheckpointKind for DenoiserCheckpoint {
    const KIND: &'static str = "denoiser";
}

impl CheckpointKind for PolicyCheckpoint {
    const KIND: &'static str = "policy";
}

/// Write through a temporary file and rename, so an interrupted write never leaves a torn checkpoint.
pub fn save<T: CheckpointKind>(path: &Path, payload: &T) -> Result<()> {
    let env = Envelope { format: FORMAT.to_string(), version: VERSION, kind: T::KIND.to_string(), payload };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&env)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<T: CheckpointKind>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let env: Envelope<serde_json::Value> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{} is not a checkpoint: {e}", path.display())))?;
    if env.format != FORMAT {
        return Err(Error::Checkpoint(format!("{} has format `{}`", path.display(), env.format)));
    }
    if env.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{} has version {}, this build reads version {VERSION}",
            path.display(),
            env.version
        )));
    }
    if env.kind != T::KIND {
        return Err(Error::Checkpoint(format!("{} holds a {} checkpoint, expected {}", path.display(), env.kind, T::KIND)));
    }
    serde_json::from_value(env.payload).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
