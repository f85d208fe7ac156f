//! Versioned JSON checkpoints holding the configuration, the pre-security and
//! final models, and the cluster assignment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::config::{Provenance, RunConfig};
use crate::error::{Result, WiretapError};
use crate::model::WiretapModel;
use crate::training::PipelineOutput;

pub const CHECKPOINT_FORMAT: &str = "wiretap-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub config: RunConfig,
    /// Encoder and Bob after phase 1, Eve after phase 2.
    pub pre_security: WiretapModel,
    pub final_model: WiretapModel,
    pub clusters: ClusterAssignment,
}

impl Checkpoint {
    pub fn from_pipeline(config: &RunConfig, output: &PipelineOutput) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            provenance: config.provenance(),
            config: config.clone(),
            pre_security: output.pre_security.clone(),
            final_model: output.final_model.clone(),
            clusters: output.clusters.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let load_err = |message: String| WiretapError::Load {
            path: origin.to_string(),
            message,
        };
        let checkpoint: Checkpoint = serde_json::from_str(text).map_err(|e| load_err(e.to_string()))?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(load_err(format!("unexpected format tag `{}`", checkpoint.format)));
        }
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(load_err(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        // Re-validate architecture after deserialization.
        for model in [&checkpoint.pre_security, &checkpoint.final_model] {
            WiretapModel::from_parts(
                model.shape(),
                model.encoder.clone(),
                model.bob.clone(),
                model.eve.clone(),
            )
            .map_err(|e| load_err(e.to_string()))?;
        }
        if checkpoint.clusters.message_count() != checkpoint.config.message_count {
            return Err(load_err("cluster assignment does not match the message count".into()));
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| WiretapError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WiretapError::Load {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}
