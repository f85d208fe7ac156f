//! Simulator for learned encoder/decoder pairs on the degraded Gaussian
//! wiretap channel.
//!
//! An autoencoder maps one-hot messages to power-normalized codewords, sends
//! them through Bob's AWGN channel and Eve's further-degraded channel, and
//! decodes both observations with identical dense decoders. Training runs in
//! four phases; the third replaces Eve's labels by cluster-uniform
//! distributions so that codewords sharing a cluster become indistinguishable
//! at Eve while Bob still separates them. Coset coding over those clusters
//! then carries secure messages.

pub mod channel;
pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod coset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod training;

pub use channel::{snr_db_to_variance, ChannelParams};
pub use checkpoint::Checkpoint;
pub use clustering::{balanced_kmeans, build_equalization, equalize, ClusterAssignment, EqualizationMatrix};
pub use config::{Provenance, RunConfig};
pub use coset::{CosetCode, CosetLayout};
pub use error::{Result, WiretapError};
pub use eval::{estimate_ser, secrecy_capacity, SerSweep, SerTable};
pub use model::{Codebook, ModelShape, Normalization, WiretapModel};
pub use nn::{FreezeMask, LayerStack};
pub use training::{run_full_pipeline, PhaseConfig, PipelineOutput, Schedule, Trainer};
