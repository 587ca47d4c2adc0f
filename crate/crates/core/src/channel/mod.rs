//! AWGN channel, quantizing codec and payload accounting.
//!
//! The channel gain is the identity: the received latent is the transmitted
//! one plus `N(0, sigma^2 I)`, with `sigma` set by the SNR against a
//! reference signal power.

pub mod codec;
pub mod wire;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use codec::{decode, encode, BitDepth, Encoded};
pub use wire::{SemanticPayload, METADATA_OVERHEAD_BITS};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Link SNR; experiment sweeps take it from the scenario instead.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_bits")]
    pub bits_per_element: u8,
    /// Reference power the SNR is measured against, in latent units squared.
    #[serde(default = "default_power")]
    pub signal_power: f64,
    /// Quantizer clip range `R`; absent means derive it from the source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_range: Option<f64>,
}

fn default_snr() -> f64 {
    10.0
}

fn default_bandwidth() -> f64 {
    20e6
}

fn default_bits() -> u8 {
    32
}

fn default_power() -> f64 {
    1.0
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            snr_db: default_snr(),
            bandwidth_hz: default_bandwidth(),
            bits_per_element: default_bits(),
            signal_power: default_power(),
            clip_range: None,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::param("bandwidth_hz", "must be positive"));
        }
        BitDepth::from_bits(self.bits_per_element)?;
        if !self.snr_db.is_finite() {
            return Err(Error::param("snr_db", "must be finite"));
        }
        if !(self.signal_power > 0.0) {
            return Err(Error::param("signal_power", "must be positive"));
        }
        Ok(())
    }

    pub fn depth(&self) -> Result<BitDepth> {
        BitDepth::from_bits(self.bits_per_element)
    }

    pub fn noise_std(&self) -> Result<f64> {
        snr_to_noise_std(self.signal_power, self.snr_db)
    }
}

/// `sigma = sqrt(P / 10^(snr_db / 10))`.
pub fn snr_to_noise_std(signal_power: f64, snr_db: f64) -> Result<f64> {
    if !(signal_power > 0.0 && signal_power.is_finite()) {
        return Err(Error::param(
            "signal_power",
            format!("must be positive (got {signal_power})"),
        ));
    }
    Ok((signal_power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Passes a payload through the AWGN channel. Metadata is assumed protected
/// and arrives intact.
pub fn transmit<T: Real, R: Rng + ?Sized>(
    payload: &SemanticPayload<T>,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<SemanticPayload<T>> {
    let sigma = cfg.noise_std()?;
    Ok(SemanticPayload {
        latent: payload.latent.add_noise(T::lit(sigma), rng),
        ..payload.clone()
    })
}

/// Encode, transmit and decode a latent: the receiver-side estimate `z'`.
/// Returns the latent and the number of clipped entries.
pub fn link<T: Real, R: Rng + ?Sized>(
    payload: &SemanticPayload<T>,
    cfg: &ChannelConfig,
    clip_range: f64,
    rng: &mut R,
) -> Result<(SemanticPayload<T>, usize)> {
    let depth = cfg.depth()?;
    let enc = encode(&payload.latent, depth, clip_range)?;
    let quantized = SemanticPayload {
        latent: decode(&enc.bytes, depth, clip_range)?,
        ..payload.clone()
    };
    Ok((transmit(&quantized, cfg, rng)?, enc.clipped))
}

/// Size `O` of a payload: `d * bits_per_element` plus the metadata overhead.
pub fn payload_size_bits<T: Real>(payload: &SemanticPayload<T>, cfg: &ChannelConfig) -> u64 {
    payload_bits_for_dim(payload.latent.dim(), cfg.bits_per_element)
}

pub fn payload_bits_for_dim(dim: usize, bits_per_element: u8) -> u64 {
    dim as u64 * bits_per_element as u64 + METADATA_OVERHEAD_BITS
}
