//! Run configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelParams;
use crate::coset::CosetLayout;
use crate::error::{Result, WiretapError};
use crate::model::{ModelShape, Normalization};
use crate::training::Schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSettings {
    /// Optimizer steps for phases 1 to 4. Phase 4 runs this many steps for
    /// Bob and then again for Eve.
    pub steps: [usize; 4],
    /// Weight of Eve's term in the security loss.
    pub security_alpha: f64,
}

impl Default for PhaseSettings {
    fn default() -> Self {
        PhaseSettings {
            steps: [5000, 3000, 5000, 3000],
            security_alpha: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Bob's SNR grid in dB.
    pub snr_db: Vec<f64>,
    pub eve_extra_snr_db: f64,
    pub samples_per_point: usize,
    pub leakage_samples: usize,
    /// Bob SNR at which the leakage proxy is measured.
    pub leakage_snr_db: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            snr_db: (-4..=16).map(f64::from).collect(),
            eve_extra_snr_db: 7.0,
            samples_per_point: 50_000,
            leakage_samples: 100_000,
            leakage_snr_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub message_count: usize,
    pub codeword_dim: usize,
    pub cluster_count: usize,
    pub normalization: Normalization,
    #[serde(default)]
    pub coset_layout: CosetLayout,
    pub channel: ChannelParams,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub phases: PhaseSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    /// 16 messages over 2 channel uses, trained at 12 dB with 5 dB of extra
    /// degradation for Eve, 4 clusters, alpha 0.7.
    fn default() -> Self {
        RunConfig {
            seed: 1,
            message_count: 16,
            codeword_dim: 2,
            cluster_count: 4,
            normalization: Normalization::BatchAverage,
            coset_layout: CosetLayout::AcrossClusters,
            channel: ChannelParams {
                bob_snr_db: 12.0,
                eve_extra_snr_db: 5.0,
            },
            schedule: Schedule::default(),
            phases: PhaseSettings::default(),
            evaluation: EvaluationSettings::default(),
            output_dir: None,
        }
    }
}

fn finite(field: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(WiretapError::config(field, format!("must be finite, got {value}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<root>".into());
            WiretapError::config(field, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WiretapError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| WiretapError::config("<root>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.message_count < 2 {
            return Err(WiretapError::config("message_count", "must be at least 2"));
        }
        if self.codeword_dim == 0 {
            return Err(WiretapError::config("codeword_dim", "must be positive"));
        }
        if self.cluster_count == 0 || !self.message_count.is_multiple_of(self.cluster_count) {
            return Err(WiretapError::config(
                "cluster_count",
                format!(
                    "l must divide |M| (l = {}, |M| = {})",
                    self.cluster_count, self.message_count
                ),
            ));
        }
        finite("channel.bob_snr_db", self.channel.bob_snr_db)?;
        finite("channel.eve_extra_snr_db", self.channel.eve_extra_snr_db)?;

        let s = &self.schedule;
        if !(s.lr_start > 0.0 && s.lr_end > 0.0 && s.lr_start.is_finite() && s.lr_end.is_finite()) {
            return Err(WiretapError::config("schedule", "learning rates must be positive"));
        }
        if s.lr_end > s.lr_start {
            return Err(WiretapError::config(
                "schedule.lr_end",
                "must not exceed schedule.lr_start",
            ));
        }
        if s.batch_start == 0 || s.batch_end < s.batch_start {
            return Err(WiretapError::config(
                "schedule.batch_end",
                "batch sizes must be positive and non-decreasing",
            ));
        }

        if let Some(i) = self.phases.steps.iter().position(|&s| s == 0) {
            return Err(WiretapError::config(
                format!("phases.steps[{i}]"),
                "every phase needs at least one step",
            ));
        }
        let alpha = self.phases.security_alpha;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(WiretapError::config(
                "phases.security_alpha",
                format!("must lie in [0, 1], got {alpha}"),
            ));
        }

        let e = &self.evaluation;
        if e.snr_db.is_empty() {
            return Err(WiretapError::config("evaluation.snr_db", "SNR grid is empty"));
        }
        for (i, &v) in e.snr_db.iter().enumerate() {
            finite(&format!("evaluation.snr_db[{i}]"), v)?;
        }
        finite("evaluation.eve_extra_snr_db", e.eve_extra_snr_db)?;
        finite("evaluation.leakage_snr_db", e.leakage_snr_db)?;
        if e.samples_per_point < 1000 {
            return Err(WiretapError::config(
                "evaluation.samples_per_point",
                "must be at least 1000",
            ));
        }
        if e.leakage_samples < 10_000 {
            return Err(WiretapError::config(
                "evaluation.leakage_samples",
                "must be at least 10000",
            ));
        }
        Ok(())
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            message_count: self.message_count,
            codeword_dim: self.codeword_dim,
            normalization: self.normalization,
        }
    }

    pub fn training_channel(&self) -> Result<ChannelParams> {
        ChannelParams::new(self.channel.bob_snr_db, self.channel.eve_extra_snr_db)
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.config_hash(),
            seed: self.seed,
        }
    }
}

/// Identifies the configuration and seed that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// A `#`-prefixed comment line for CSV artifacts.
    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}
