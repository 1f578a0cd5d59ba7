//! Run checkpoints as single JSON documents.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::RunState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed checkpoint {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("checkpoint format {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

/// Everything needed to continue a run bit-exactly: the engine (with its
/// random stream), the termination history and the run bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub objective: String,
    pub dim: usize,
    pub seed: u64,
    pub state: RunState,
}

impl Checkpoint {
    pub fn new(objective: &str, dim: usize, seed: u64, state: RunState) -> Self {
        Self {
            format: FORMAT_VERSION,
            objective: objective.to_string(),
            dim,
            seed,
            state,
        }
    }

    /// Writes to a sibling temporary file first, then renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let json = serde_json::to_vec(self).map_err(|e| io_err(io::Error::other(e)))?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, json).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: name.clone(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|source| CheckpointError::Parse { path: name, source })?;
        if ckpt.format != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: ckpt.format });
        }
        ckpt.state
            .engine
            .check_consistency()
            .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
        if ckpt.state.engine.dim() != ckpt.dim {
            return Err(CheckpointError::Inconsistent(format!(
                "engine dimension {} differs from recorded {}",
                ckpt.state.engine.dim(),
                ckpt.dim
            )));
        }
        Ok(ckpt)
    }
}
