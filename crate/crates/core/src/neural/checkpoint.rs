//! Versioned training checkpoints.
//!
//! A checkpoint captures everything needed to resume a solver run bit-for-bit
//! at a stage boundary: per-player value and policy networks, their optimizer
//! moments, the stage index, the per-player cost normalization in effect, and
//! the digest of the resolved configuration that produced the run. Files are
//! JSON with a fixed field order (the struct order below); network and
//! optimizer parameters are flattened in the order documented on
//! [`MlpParams::to_flat`] — per layer, weight matrix row-major, then bias.
//!
//! Loading verifies the format version and, when the caller supplies one,
//! the configuration digest — resuming under a silently changed configuration
//! is an error rather than a wrong answer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, MlpParams, OptimizerState};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// One serialized network: layer widths, head, and flattened parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetRecord {
    pub dims: Vec<usize>,
    pub head: String,
    pub params: Vec<f64>,
}

/// One serialized optimizer: hyperparameters, step counter, and flattened
/// first/second moments aligned with the owning network's parameter order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptRecord {
    pub learning_rate: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// Per-player nets and optimizer states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlayerRecord {
    pub value_net: NetRecord,
    pub policy_net: NetRecord,
    pub value_opt: OptRecord,
    pub policy_opt: OptRecord,
}

/// A full training checkpoint; see the module docs for the field contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_digest: String,
    /// Stages completed when the checkpoint was written.
    pub stage: usize,
    /// Per-player internal cost normalization used during training.
    pub cost_scale: Vec<f64>,
    pub players: Vec<PlayerRecord>,
}

fn head_name(head: Head) -> &'static str {
    match head {
        Head::Identity => "identity",
        Head::Logistic => "logistic",
    }
}

fn head_from_name(name: &str) -> Result<Head> {
    match name {
        "identity" => Ok(Head::Identity),
        "logistic" => Ok(Head::Logistic),
        other => Err(Error::ArtifactMismatch(format!(
            "checkpoint: unknown head kind {other:?}"
        ))),
    }
}

impl NetRecord {
    pub fn from_params(params: &MlpParams) -> Self {
        NetRecord {
            dims: params.dims().to_vec(),
            head: head_name(params.head()).to_string(),
            params: params.to_flat(),
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        MlpParams::from_flat(&self.dims, head_from_name(&self.head)?, &self.params)
    }
}

impl OptRecord {
    pub fn from_state(state: &OptimizerState) -> Self {
        let (first_moment, second_moment) = state.to_flat();
        OptRecord {
            learning_rate: state.learning_rate(),
            step: state.step_count(),
            first_moment,
            second_moment,
        }
    }

    pub fn to_state(&self, params: &MlpParams) -> Result<OptimizerState> {
        OptimizerState::from_flat(
            params,
            self.learning_rate,
            self.step,
            &self.first_moment,
            &self.second_moment,
        )
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Load and verify the format version; `expected_digest` additionally
    /// pins the resolved configuration (pass `None` to skip, e.g. under an
    /// explicit override).
    pub fn load(path: &Path, expected_digest: Option<&str>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if let Some(expected) = expected_digest {
            if ckpt.config_digest != expected {
                return Err(Error::ArtifactMismatch(format!(
                    "checkpoint was produced under config digest {} but the current config digests to {expected}",
                    ckpt.config_digest
                )));
            }
        }
        Ok(ckpt)
    }
}
