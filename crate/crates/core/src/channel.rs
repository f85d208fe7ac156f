//! Degraded Gaussian wiretap channel.
//!
//! Bob observes `y = x + n_B` and Eve observes `z = y + n_E`, with independent
//! zero-mean Gaussian noise per coordinate. SNR values are given in dB and
//! mapped to noise variance through `sigma^2 = 1 / SNR`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WiretapError};

/// Noise variance for a linear SNR given in dB.
pub fn snr_db_to_variance(snr_db: f64) -> f64 {
    1.0 / 10f64.powf(snr_db / 10.0)
}

/// SNR configuration of the two channel stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub bob_snr_db: f64,
    /// SNR of the additional noise stage between Bob's and Eve's observation.
    pub eve_extra_snr_db: f64,
}

impl ChannelParams {
    pub fn new(bob_snr_db: f64, eve_extra_snr_db: f64) -> Result<Self> {
        if !bob_snr_db.is_finite() || !eve_extra_snr_db.is_finite() {
            return Err(WiretapError::Parameter(format!(
                "channel SNRs must be finite, got {bob_snr_db} dB and {eve_extra_snr_db} dB"
            )));
        }
        Ok(ChannelParams {
            bob_snr_db,
            eve_extra_snr_db,
        })
    }

    pub fn bob_variance(&self) -> f64 {
        snr_db_to_variance(self.bob_snr_db)
    }

    pub fn eve_extra_variance(&self) -> f64 {
        snr_db_to_variance(self.eve_extra_snr_db)
    }

    /// Total noise variance seen by Eve.
    pub fn eve_total_variance(&self) -> f64 {
        self.bob_variance() + self.eve_extra_variance()
    }
}

fn check_variance(variance: f64) -> Result<()> {
    if variance > 0.0 && variance.is_finite() {
        Ok(())
    } else {
        Err(WiretapError::Parameter(format!(
            "noise variance must be positive and finite, got {variance}"
        )))
    }
}

/// Adds i.i.d. `N(0, variance)` noise to every coordinate of `signal`.
pub fn add_awgn<R: Rng + ?Sized>(
    signal: ArrayView2<f64>,
    variance: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_variance(variance)?;
    let std = variance.sqrt();
    let mut out = signal.to_owned();
    // Row-major traversal keeps the draw order independent of memory layout.
    for mut row in out.rows_mut() {
        for v in row.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += std * n;
        }
    }
    Ok(out)
}

/// Bob's channel: `y = x + n_B`.
pub fn bob_channel<R: Rng + ?Sized>(
    codewords: ArrayView2<f64>,
    bob_variance: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    add_awgn(codewords, bob_variance, rng)
}

/// Eve's additional stage, applied to Bob's observation: `z = y + n_E`.
pub fn eve_channel<R: Rng + ?Sized>(
    bob_received: ArrayView2<f64>,
    eve_extra_variance: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    add_awgn(bob_received, eve_extra_variance, rng)
}
