//! Uniform mid-rise quantizer mapping latents to packed bits and back.

use crate::diffusion::Latent;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Quantizer depth. The 32-bit depth is a lossless IEEE single-precision
/// encoding rather than a quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    B8,
    B16,
    B32,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::B8 => 8,
            BitDepth::B16 => 16,
            BitDepth::B32 => 32,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::B8),
            16 => Ok(BitDepth::B16),
            32 => Ok(BitDepth::B32),
            other => Err(Error::param(
                "bits_per_element",
                format!("must be 8, 16 or 32 (got {other})"),
            )),
        }
    }

    /// Quantization step `2R / 2^bits`; zero for the lossless depth.
    pub fn step(self, clip_range: f64) -> f64 {
        match self {
            BitDepth::B32 => 0.0,
            _ => 2.0 * clip_range / (1u64 << self.bits()) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    /// Elements in index order, each most-significant byte first.
    pub bytes: Vec<u8>,
    /// Entries that fell outside `[-R, R]` and were clipped.
    pub clipped: usize,
}

/// Encodes `z` at the given depth over the clip range `[-R, R]`.
pub fn encode<T: Real>(z: &Latent<T>, depth: BitDepth, clip_range: f64) -> Result<Encoded> {
    if !z.is_finite() {
        return Err(Error::Invariant("cannot encode non-finite latent".into()));
    }
    let mut bytes = Vec::with_capacity(z.dim() * depth.bytes());
    let mut clipped = 0;
    match depth {
        BitDepth::B32 => {
            for &x in z.iter() {
                bytes.extend_from_slice(&x.to_f32_bits().to_be_bytes());
            }
        }
        BitDepth::B8 | BitDepth::B16 => {
            if !(clip_range > 0.0 && clip_range.is_finite()) {
                return Err(Error::param("clip_range", format!("must be positive (got {clip_range})")));
            }
            let levels = 1u64 << depth.bits();
            let step = depth.step(clip_range);
            for &x in z.iter() {
                let x = x.as_f64();
                if x < -clip_range || x > clip_range {
                    clipped += 1;
                }
                let q = ((x + clip_range) / step).floor().clamp(0.0, (levels - 1) as f64) as u64;
                match depth {
                    BitDepth::B8 => bytes.push(q as u8),
                    _ => bytes.extend_from_slice(&(q as u16).to_be_bytes()),
                }
            }
        }
    }
    Ok(Encoded { bytes, clipped })
}

/// Inverse of [`encode`]: reconstructs each element at its cell midpoint.
pub fn decode<T: Real>(bytes: &[u8], depth: BitDepth, clip_range: f64) -> Result<Latent<T>> {
    let width = depth.bytes();
    if !bytes.len().is_multiple_of(width) {
        return Err(Error::Wire(format!(
            "{} bits is not a multiple of {} bits per element",
            bytes.len() * 8,
            depth.bits()
        )));
    }
    let step = depth.step(clip_range);
    let values = bytes
        .chunks_exact(width)
        .map(|chunk| match depth {
            BitDepth::B32 => T::from_f32_bits(u32::from_be_bytes(chunk.try_into().unwrap())),
            BitDepth::B8 => T::lit(-clip_range + (chunk[0] as f64 + 0.5) * step),
            BitDepth::B16 => {
                let q = u16::from_be_bytes(chunk.try_into().unwrap());
                T::lit(-clip_range + (q as f64 + 0.5) * step)
            }
        })
        .collect();
    Latent::new(values)
}
