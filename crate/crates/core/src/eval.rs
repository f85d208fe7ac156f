//! Monte Carlo error-rate sweeps, decision-region export, secrecy capacity of
//! the degraded Gaussian wiretap channel, and an empirical leakage proxy.
//!
//! Sweep points are independent: point `i` draws from its own ChaCha stream
//! `EVAL_STREAM_BASE + i` under the sweep seed, so results do not depend on
//! how points are scheduled across threads.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{bob_channel, eve_channel, snr_db_to_variance, ChannelParams};
use crate::config::Provenance;
use crate::coset::CosetCode;
use crate::error::{Result, WiretapError};
use crate::model::{decide, Codebook, WiretapModel};
use crate::nn::LayerStack;
use crate::training::stream_rng;

pub const EVAL_STREAM_BASE: u64 = 1000;
pub const LEAKAGE_STREAM: u64 = 999;
const CHUNK: usize = 2048;

/// Half-width of the 95% Wilson score interval for `errors` out of `trials`.
pub fn wilson_halfwidth(errors: u64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRow {
    pub snr_db: f64,
    pub bob_symbol_err: f64,
    pub eve_symbol_err: f64,
    /// Secure-message error rates, present when a coset code was used.
    pub bob_message_err: Option<f64>,
    pub eve_message_err: Option<f64>,
    pub samples: u64,
    /// Largest Wilson 95% half-width among the row's error rates.
    pub wilson_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SerTable {
    pub rows: Vec<SerRow>,
}

impl SerTable {
    /// Writes the plot-ready CSV, optionally preceded by a provenance comment.
    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&Provenance>) -> std::io::Result<()> {
        if let Some(p) = provenance {
            writeln!(out, "{}", p.comment_line())?;
        }
        writeln!(
            out,
            "snr_db,bob_symbol_err,eve_symbol_err,bob_message_err,eve_message_err,samples,wilson_halfwidth"
        )?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.snr_db,
                r.bob_symbol_err,
                r.eve_symbol_err,
                opt(r.bob_message_err),
                opt(r.eve_message_err),
                r.samples,
                r.wilson_halfwidth
            )?;
        }
        Ok(())
    }
}

/// Parameters of a symbol-error-rate sweep over Bob's SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerSweep {
    pub snr_db: Vec<f64>,
    pub eve_extra_snr_db: f64,
    pub samples_per_point: usize,
    pub seed: u64,
}

impl SerSweep {
    fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(WiretapError::Parameter("SNR grid is empty".into()));
        }
        if self.samples_per_point < 1000 {
            return Err(WiretapError::Parameter(format!(
                "at least 1000 samples per point required, got {}",
                self.samples_per_point
            )));
        }
        if self
            .snr_db
            .iter()
            .chain(std::iter::once(&self.eve_extra_snr_db))
            .any(|v| !v.is_finite())
        {
            return Err(WiretapError::Parameter("SNR values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    bob_symbol: u64,
    eve_symbol: u64,
    bob_message: u64,
    eve_message: u64,
    total: u64,
}

/// Frozen view of a model used for Monte Carlo evaluation.
struct Link<'a> {
    codebook: Codebook,
    bob: &'a LayerStack,
    eve: &'a LayerStack,
}

impl Link<'_> {
    fn new(model: &WiretapModel) -> Result<Link<'_>> {
        Ok(Link {
            codebook: model.codebook()?,
            bob: &model.bob,
            eve: &model.eve,
        })
    }

    fn run_point<R: Rng>(
        &self,
        code: Option<&CosetCode>,
        bob_variance: f64,
        eve_variance: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<Tally> {
        let m = self.codebook.message_count();
        let mut tally = Tally::default();
        let mut remaining = samples;
        while remaining > 0 {
            let chunk = remaining.min(CHUNK);
            remaining -= chunk;
            let mut secure = Vec::with_capacity(chunk);
            let mut symbols = Vec::with_capacity(chunk);
            for _ in 0..chunk {
                match code {
                    Some(code) => {
                        let msg = rng.random_range(0..code.secure_message_count());
                        symbols.push(code.encode_secure(msg, rng)?);
                        secure.push(msg);
                    }
                    None => symbols.push(rng.random_range(0..m)),
                }
            }
            let x = self.codebook.lookup(&symbols)?;
            let y = bob_channel(x.view(), bob_variance, rng)?;
            let z = eve_channel(y.view(), eve_variance, rng)?;
            let bob = decide(self.bob, y.view())?;
            let eve = decide(self.eve, z.view())?;
            for i in 0..chunk {
                tally.bob_symbol += u64::from(bob[i] != symbols[i]);
                tally.eve_symbol += u64::from(eve[i] != symbols[i]);
                if let Some(code) = code {
                    tally.bob_message += u64::from(code.decode_secure(bob[i])? != secure[i]);
                    tally.eve_message += u64::from(code.decode_secure(eve[i])? != secure[i]);
                }
            }
            tally.total += chunk as u64;
        }
        Ok(tally)
    }
}

/// Symbol (and, with a coset code, secure-message) error rates of Bob and Eve
/// over a grid of Bob SNRs, with Eve's extra degradation held fixed.
pub fn estimate_ser(model: &WiretapModel, code: Option<&CosetCode>, sweep: &SerSweep) -> Result<SerTable> {
    sweep.validate()?;
    if let Some(code) = code {
        if code.symbol_count() != model.message_count() {
            return Err(WiretapError::shape(
                "coset code",
                model.message_count(),
                code.symbol_count(),
            ));
        }
    }
    let link = Link::new(model)?;
    let eve_variance = snr_db_to_variance(sweep.eve_extra_snr_db);
    let rows = sweep
        .snr_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let mut rng = stream_rng(sweep.seed, EVAL_STREAM_BASE + i as u64);
            let t = link.run_point(
                code,
                snr_db_to_variance(snr),
                eve_variance,
                sweep.samples_per_point,
                &mut rng,
            )?;
            let rate = |e: u64| e as f64 / t.total as f64;
            let mut counts = vec![t.bob_symbol, t.eve_symbol];
            if code.is_some() {
                counts.extend([t.bob_message, t.eve_message]);
            }
            let halfwidth = counts
                .iter()
                .map(|&e| wilson_halfwidth(e, t.total))
                .fold(0.0, f64::max);
            Ok(SerRow {
                snr_db: snr,
                bob_symbol_err: rate(t.bob_symbol),
                eve_symbol_err: rate(t.eve_symbol),
                bob_message_err: code.map(|_| rate(t.bob_message)),
                eve_message_err: code.map(|_| rate(t.eve_message)),
                samples: t.total,
                wilson_halfwidth: halfwidth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SerTable { rows })
}

/// Secrecy capacity `1/2 ln(1 + P/s_B) - 1/2 ln(1 + P/(s_E + s_B))` in nats.
///
/// `eve_extra_variance` may be zero (no advantage, zero capacity).
pub fn secrecy_capacity(power: f64, bob_variance: f64, eve_extra_variance: f64) -> Result<f64> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(WiretapError::Parameter(format!(
            "power must be non-negative, got {power}"
        )));
    }
    if !(bob_variance > 0.0 && bob_variance.is_finite()) {
        return Err(WiretapError::Parameter(format!(
            "Bob's noise variance must be positive, got {bob_variance}"
        )));
    }
    if !(eve_extra_variance >= 0.0 && eve_extra_variance.is_finite()) {
        return Err(WiretapError::Parameter(format!(
            "Eve's extra noise variance must be non-negative, got {eve_extra_variance}"
        )));
    }
    let bob = 0.5 * (power / bob_variance).ln_1p();
    let eve = 0.5 * (power / (eve_extra_variance + bob_variance)).ln_1p();
    Ok((bob - eve).max(0.0))
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Square evaluation grid over `[-half_width, half_width]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub resolution: usize,
}

impl GridSpec {
    /// `half_width = 1.5 sqrt(n)` with 201 cells per side.
    pub fn for_dim(codeword_dim: usize) -> Self {
        GridSpec {
            half_width: 1.5 * (codeword_dim as f64).sqrt(),
            resolution: 201,
        }
    }

    pub fn coordinate(&self, index: usize) -> f64 {
        if self.resolution == 1 {
            return 0.0;
        }
        -self.half_width + 2.0 * self.half_width * index as f64 / (self.resolution - 1) as f64
    }
}

/// Argmax decision of a decoder at every cell center of a 2-d grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRegionGrid {
    pub spec: GridSpec,
    /// Row-major labels: index `iy * resolution + ix`.
    pub labels: Vec<usize>,
}

impl DecisionRegionGrid {
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let r = self.spec.resolution;
        self.labels
            .iter()
            .enumerate()
            .map(move |(k, &l)| (self.spec.coordinate(k % r), self.spec.coordinate(k / r), l))
    }

    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&Provenance>) -> std::io::Result<()> {
        if let Some(p) = provenance {
            writeln!(out, "{}", p.comment_line())?;
        }
        writeln!(out, "x,y,label")?;
        for (x, y, l) in self.cells() {
            writeln!(out, "{x},{y},{l}")?;
        }
        Ok(())
    }
}

pub fn export_decision_regions(decoder: &LayerStack, spec: GridSpec) -> Result<DecisionRegionGrid> {
    if decoder.in_dim() != 2 {
        return Err(WiretapError::Unsupported(format!(
            "decision regions need 2-d codewords, decoder takes {}",
            decoder.in_dim()
        )));
    }
    if spec.resolution == 0 || spec.half_width.is_nan() || spec.half_width <= 0.0 {
        return Err(WiretapError::Parameter("grid needs positive size".into()));
    }
    let r = spec.resolution;
    let points = Array2::from_shape_fn((r * r, 2), |(k, axis)| {
        if axis == 0 {
            spec.coordinate(k % r)
        } else {
            spec.coordinate(k / r)
        }
    });
    Ok(DecisionRegionGrid {
        spec,
        labels: decide(decoder, points.view())?,
    })
}

/// Plug-in mutual information, in bits, of a joint count table.
pub fn plug_in_mutual_information(joint: ArrayView2<u64>) -> f64 {
    let total: u64 = joint.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let rows: Vec<f64> = joint.rows().into_iter().map(|r| r.sum() as f64).collect();
    let cols: Vec<f64> = joint.columns().into_iter().map(|c| c.sum() as f64).collect();
    let mut mi = 0.0;
    for ((i, j), &c) in joint.indexed_iter() {
        if c > 0 {
            let c = c as f64;
            mi += c / n * (c * n / (rows[i] * cols[j])).log2();
        }
    }
    mi.max(0.0)
}

/// Plug-in mutual information between the secure message and Eve's decoded
/// secure message, in bits.
pub fn leakage_proxy(
    model: &WiretapModel,
    code: &CosetCode,
    channel: ChannelParams,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 10_000 {
        return Err(WiretapError::Parameter(format!(
            "leakage proxy needs at least 10000 samples, got {samples}"
        )));
    }
    let link = Link::new(model)?;
    let k = code.secure_message_count();
    let mut joint = Array2::<u64>::zeros((k, k));
    let mut rng = stream_rng(seed, LEAKAGE_STREAM);
    let mut remaining = samples;
    while remaining > 0 {
        let chunk = remaining.min(CHUNK);
        remaining -= chunk;
        let mut messages = Vec::with_capacity(chunk);
        let mut symbols = Vec::with_capacity(chunk);
        for _ in 0..chunk {
            let msg = rng.random_range(0..k);
            symbols.push(code.encode_secure(msg, &mut rng)?);
            messages.push(msg);
        }
        let x = link.codebook.lookup(&symbols)?;
        let y = bob_channel(x.view(), channel.bob_variance(), &mut rng)?;
        let z = eve_channel(y.view(), channel.eve_extra_variance(), &mut rng)?;
        for (msg, decision) in messages.iter().zip(decide(link.eve, z.view())?) {
            joint[[*msg, code.decode_secure(decision)?]] += 1;
        }
    }
    Ok(plug_in_mutual_information(joint.view()))
}
