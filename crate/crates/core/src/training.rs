//! Four-phase training with block freezing.
//!
//! 1. Encoder and Bob learn a constellation with plain cross-entropy.
//! 2. The encoder is frozen and Eve learns to decode it through her channel.
//! 3. Eve is frozen and encoder plus Bob minimize the security loss against
//!    the equalized (cluster-uniform) labels.
//! 4. The encoder is frozen and both decoders are retrained on the secured
//!    constellation, Bob first, then Eve.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{bob_channel, eve_channel, ChannelParams};
use crate::clustering::{balanced_kmeans, build_equalization, equalize, ClusterAssignment, EqualizationMatrix};
use crate::config::RunConfig;
use crate::error::{Result, WiretapError};
use crate::losses::{
    cross_entropy, cross_entropy_logit_gradients, naive_difference_logit_gradients,
    naive_difference_loss, security_logit_gradients, security_loss,
};
use crate::model::{one_hot, Codebook, ModelOptimizer, WiretapModel};
use crate::nn::{softmax_rows, AdamConfig, FreezeMask};

/// RNG stream used for parameter initialization and training draws.
pub const TRAINING_STREAM: u64 = 0;
/// RNG stream used by the clustering step.
pub const CLUSTERING_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BobCe,
    EveCe,
    Security,
    JointRefresh,
    /// Bob's cross-entropy minus Eve's; unbounded below, diagnostic only.
    NaiveDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase_id: u8,
    pub steps: usize,
    pub loss: LossKind,
    pub freeze: FreezeMask,
    pub alpha: f64,
    pub channel: ChannelParams,
}

impl PhaseConfig {
    /// The standard configuration of phase `phase_id` (1 to 4).
    pub fn standard(phase_id: u8, steps: usize, alpha: f64, channel: ChannelParams) -> Result<Self> {
        let (loss, freeze) = match phase_id {
            1 => (
                LossKind::BobCe,
                FreezeMask {
                    eve_frozen: true,
                    ..FreezeMask::NONE
                },
            ),
            2 => (
                LossKind::EveCe,
                FreezeMask {
                    encoder_frozen: true,
                    bob_frozen: true,
                    eve_frozen: false,
                },
            ),
            3 => (
                LossKind::Security,
                FreezeMask {
                    eve_frozen: true,
                    ..FreezeMask::NONE
                },
            ),
            4 => (
                LossKind::JointRefresh,
                FreezeMask {
                    encoder_frozen: true,
                    ..FreezeMask::NONE
                },
            ),
            other => {
                return Err(WiretapError::Parameter(format!(
                    "phase id must be 1..=4, got {other}"
                )))
            }
        };
        Ok(PhaseConfig {
            phase_id,
            steps,
            loss,
            freeze,
            alpha,
            channel,
        })
    }

    /// Phase-3 replacement that minimizes the naive difference loss with
    /// every block trainable.
    pub fn naive_diagnostic(steps: usize, channel: ChannelParams) -> Self {
        PhaseConfig {
            phase_id: 3,
            steps,
            loss: LossKind::NaiveDifference,
            freeze: FreezeMask::NONE,
            alpha: 0.0,
            channel,
        }
    }
}

/// Learning-rate and batch-size schedule applied over each phase.
///
/// The learning rate decays geometrically from `lr_start` to `lr_end`; the
/// batch size grows linearly from `batch_start` to `batch_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_start: usize,
    pub batch_end: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            lr_start: 0.1,
            lr_end: 0.001,
            batch_start: 25,
            batch_end: 300,
        }
    }
}

impl Schedule {
    fn fraction(step: usize, total: usize) -> f64 {
        if total <= 1 {
            0.0
        } else {
            step.min(total - 1) as f64 / (total - 1) as f64
        }
    }

    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        let t = Self::fraction(step, total);
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }

    pub fn batch_size(&self, step: usize, total: usize) -> usize {
        let t = Self::fraction(step, total);
        let start = self.batch_start as f64;
        let end = self.batch_end as f64;
        (start + (end - start) * t).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub phase: u8,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn extend(&mut self, other: LossTrace) {
        self.rows.extend(other.rows);
    }

    pub fn phase(&self, phase: u8) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// Writes `step,phase,loss` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,phase,loss")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.step, r.phase, r.loss)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepLoss {
    Bob,
    Eve,
    Security,
    Naive,
}

/// Owns the model during training and enforces the phase order.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: WiretapModel,
    rng: ChaCha8Rng,
    completed_phase: u8,
    equalization: Option<EqualizationMatrix>,
    adam: AdamConfig,
}

impl Trainer {
    pub fn new(model: WiretapModel, rng: ChaCha8Rng) -> Self {
        Trainer {
            model,
            rng,
            completed_phase: 0,
            equalization: None,
            adam: AdamConfig::default(),
        }
    }

    pub fn model(&self) -> &WiretapModel {
        &self.model
    }

    pub fn into_model(self) -> WiretapModel {
        self.model
    }

    pub fn completed_phase(&self) -> u8 {
        self.completed_phase
    }

    pub fn set_equalization(&mut self, equalization: EqualizationMatrix) -> Result<()> {
        if equalization.size() != self.model.message_count() {
            return Err(WiretapError::shape(
                "equalization matrix",
                self.model.message_count(),
                equalization.size(),
            ));
        }
        self.equalization = Some(equalization);
        Ok(())
    }

    /// Runs one training phase. Phases must run in order 1, 2, 3, 4.
    pub fn run_phase(&mut self, phase: &PhaseConfig, schedule: &Schedule) -> Result<LossTrace> {
        if phase.phase_id != self.completed_phase + 1 {
            return Err(WiretapError::State(format!(
                "phase {} requested after phase {}",
                phase.phase_id, self.completed_phase
            )));
        }
        if phase.steps == 0 {
            return Err(WiretapError::Parameter("phase needs at least one step".into()));
        }
        if phase.loss == LossKind::Security && self.equalization.is_none() {
            return Err(WiretapError::State(
                "security phase requires an equalization matrix".into(),
            ));
        }

        let mut trace = LossTrace::default();
        match phase.loss {
            LossKind::BobCe => self.run_stage(phase, schedule, StepLoss::Bob, phase.freeze, 0, &mut trace)?,
            LossKind::EveCe => self.run_stage(phase, schedule, StepLoss::Eve, phase.freeze, 0, &mut trace)?,
            LossKind::Security => {
                self.run_stage(phase, schedule, StepLoss::Security, phase.freeze, 0, &mut trace)?
            }
            LossKind::NaiveDifference => {
                self.run_stage(phase, schedule, StepLoss::Naive, phase.freeze, 0, &mut trace)?
            }
            LossKind::JointRefresh => {
                let bob_only = FreezeMask {
                    encoder_frozen: true,
                    bob_frozen: phase.freeze.bob_frozen,
                    eve_frozen: true,
                };
                let eve_only = FreezeMask {
                    encoder_frozen: true,
                    bob_frozen: true,
                    eve_frozen: phase.freeze.eve_frozen,
                };
                self.run_stage(phase, schedule, StepLoss::Bob, bob_only, 0, &mut trace)?;
                self.run_stage(phase, schedule, StepLoss::Eve, eve_only, phase.steps, &mut trace)?;
            }
        }
        self.model.clear_tapes();
        self.completed_phase = phase.phase_id;
        Ok(trace)
    }

    fn run_stage(
        &mut self,
        phase: &PhaseConfig,
        schedule: &Schedule,
        loss: StepLoss,
        freeze: FreezeMask,
        step_offset: usize,
        trace: &mut LossTrace,
    ) -> Result<()> {
        let mut optimizer = ModelOptimizer::new(&self.model, self.adam);
        for step in 0..phase.steps {
            let lr = schedule.learning_rate(step, phase.steps);
            let batch = schedule.batch_size(step, phase.steps).max(1);
            let value = self.step(loss, freeze, phase, batch, lr, &mut optimizer)?;
            trace.rows.push(TraceRow {
                phase: phase.phase_id,
                step: step_offset + step,
                loss: value,
            });
        }
        Ok(())
    }

    fn step(
        &mut self,
        loss: StepLoss,
        freeze: FreezeMask,
        phase: &PhaseConfig,
        batch: usize,
        lr: f64,
        optimizer: &mut ModelOptimizer,
    ) -> Result<f64> {
        let m = self.model.message_count();
        let messages: Vec<usize> = (0..batch).map(|_| self.rng.random_range(0..m)).collect();
        let needs_eve = loss != StepLoss::Bob;
        let bob_var = phase.channel.bob_variance();
        let eve_var = phase.channel.eve_extra_variance();

        let rng = &mut self.rng;
        let pass = self.model.forward_recorded(&messages, |x| {
            let y = bob_channel(x, bob_var, rng)?;
            let z = if needs_eve {
                Some(eve_channel(y.view(), eve_var, rng)?)
            } else {
                None
            };
            Ok((y, z))
        })?;

        let targets = one_hot(&messages, m)?;
        let bob_probs = softmax_rows(pass.bob_logits.view())?;
        let eve_probs = match &pass.eve_logits {
            Some(l) => Some(softmax_rows(l.view())?),
            None => None,
        };
        let eve_view = || -> Result<ArrayView2<f64>> {
            eve_probs
                .as_ref()
                .map(|p| p.view())
                .ok_or_else(|| WiretapError::State("Eve's decoder was not run".into()))
        };

        let (value, bob_grad, eve_grad): (f64, Option<Array2<f64>>, Option<Array2<f64>>) = match loss {
            StepLoss::Bob => (
                cross_entropy(targets.view(), bob_probs.view())?.scalar,
                Some(cross_entropy_logit_gradients(targets.view(), bob_probs.view())?),
                None,
            ),
            StepLoss::Eve => {
                let eve = eve_view()?;
                (
                    cross_entropy(targets.view(), eve)?.scalar,
                    None,
                    Some(cross_entropy_logit_gradients(targets.view(), eve)?),
                )
            }
            StepLoss::Security => {
                let equalization = self.equalization.as_ref().ok_or_else(|| {
                    WiretapError::State("security phase requires an equalization matrix".into())
                })?;
                let equalized = equalize(targets.view(), equalization)?;
                let eve = eve_view()?;
                let value = security_loss(
                    targets.view(),
                    equalized.view(),
                    bob_probs.view(),
                    eve,
                    phase.alpha,
                )?
                .scalar;
                let (b, e) = security_logit_gradients(
                    targets.view(),
                    equalized.view(),
                    bob_probs.view(),
                    eve,
                    phase.alpha,
                )?;
                (value, Some(b), Some(e))
            }
            StepLoss::Naive => {
                let eve = eve_view()?;
                let value = naive_difference_loss(targets.view(), bob_probs.view(), eve)?.scalar;
                let (b, e) = naive_difference_logit_gradients(targets.view(), bob_probs.view(), eve)?;
                (value, Some(b), Some(e))
            }
        };
        if !value.is_finite() {
            return Err(WiretapError::Numeric(format!(
                "non-finite loss in phase {}",
                phase.phase_id
            )));
        }

        let grads = self.model.backward(
            &pass,
            bob_grad.as_ref().map(|g| g.view()),
            eve_grad.as_ref().map(|g| g.view()),
            freeze,
        )?;
        self.model.apply_gradients(&grads, optimizer, lr)?;
        Ok(value)
    }
}

/// Seeded RNG on a given stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything produced by a full training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Model after phases 1 and 2: phase-1 encoder and Bob, phase-2 Eve.
    pub pre_security: WiretapModel,
    pub final_model: WiretapModel,
    pub phase1_codebook: Codebook,
    pub final_codebook: Codebook,
    pub clusters: ClusterAssignment,
    pub trace: LossTrace,
}

/// Runs phases 1 and 2 and returns the trainer ready for phase 3.
pub fn run_pre_security(config: &RunConfig) -> Result<(Trainer, LossTrace)> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, TRAINING_STREAM);
    let model = WiretapModel::new(config.model_shape(), &mut rng)?;
    let mut trainer = Trainer::new(model, rng);
    let channel = config.training_channel()?;
    let mut trace = LossTrace::default();
    for phase_id in 1..=2u8 {
        let phase = PhaseConfig::standard(
            phase_id,
            config.phases.steps[phase_id as usize - 1],
            config.phases.security_alpha,
            channel,
        )?;
        trace.extend(trainer.run_phase(&phase, &config.schedule)?);
    }
    Ok((trainer, trace))
}

/// Clusters a codebook with the configured cluster count and clustering stream.
pub fn cluster_codebook(config: &RunConfig, codebook: &Codebook) -> Result<ClusterAssignment> {
    let mut rng = stream_rng(config.seed, CLUSTERING_STREAM);
    balanced_kmeans(codebook.codewords.view(), config.cluster_count, &mut rng)
}

/// Phases 1 to 4 with clustering of the phase-1 constellation before phase 3.
pub fn run_full_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    let (mut trainer, mut trace) = run_pre_security(config)?;
    let pre_security = trainer.model().clone();
    let phase1_codebook = pre_security.codebook()?;
    let clusters = cluster_codebook(config, &phase1_codebook)?;
    trainer.set_equalization(build_equalization(&clusters))?;

    let channel = config.training_channel()?;
    for phase_id in 3..=4u8 {
        let phase = PhaseConfig::standard(
            phase_id,
            config.phases.steps[phase_id as usize - 1],
            config.phases.security_alpha,
            channel,
        )?;
        trace.extend(trainer.run_phase(&phase, &config.schedule)?);
    }
    let final_model = trainer.into_model();
    let final_codebook = final_model.codebook()?;
    Ok(PipelineOutput {
        pre_security,
        final_model,
        phase1_codebook,
        final_codebook,
        clusters,
        trace,
    })
}

/// Phases 1 and 2 followed by the naive difference loss in place of phase 3.
pub fn run_naive_diagnostic(config: &RunConfig, steps: usize) -> Result<(WiretapModel, LossTrace)> {
    let (mut trainer, mut trace) = run_pre_security(config)?;
    let phase = PhaseConfig::naive_diagnostic(steps, config.training_channel()?);
    trace.extend(trainer.run_phase(&phase, &config.schedule)?);
    Ok((trainer.into_model(), trace))
}
