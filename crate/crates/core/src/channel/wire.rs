//! Semantic payload wire format.
//!
//! ```text
//! "SDRP" | version u8 | label u16 | residual_step u16 | d u32 |
//! bits_per_element u8 | schedule_digest [u8; 8] | element bits
//! ```
//!
//! All integers are big-endian; elements are packed most-significant bit
//! first in index order.

use super::codec::{self, BitDepth};
use crate::diffusion::Latent;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"SDRP";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 2 + 2 + 4 + 1 + 8;
/// Fixed metadata overhead added to every payload, in bits.
pub const METADATA_OVERHEAD_BITS: u64 = HEADER_BYTES as u64 * 8;

/// The unit of transmission: a latent plus the metadata the receiver needs
/// to resume the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPayload<T> {
    pub latent: Latent<T>,
    pub label: u16,
    /// Diffusion level of `latent`, i.e. the number of reverse steps the
    /// receiver still has to run.
    pub residual_step: u16,
    pub schedule_digest: u64,
}

impl<T: Real> SemanticPayload<T> {
    /// Refuses the payload if it was produced under a different schedule.
    pub fn verify_digest(&self, receiver: u64) -> Result<()> {
        if self.schedule_digest == receiver {
            Ok(())
        } else {
            Err(Error::DigestMismatch {
                payload: self.schedule_digest,
                receiver,
            })
        }
    }
}

/// Serializes a payload; returns the bytes and the number of clipped entries.
pub fn to_bytes<T: Real>(
    payload: &SemanticPayload<T>,
    depth: BitDepth,
    clip_range: f64,
) -> Result<(Vec<u8>, usize)> {
    let d = u32::try_from(payload.latent.dim())
        .map_err(|_| Error::Wire("latent dimension exceeds u32".into()))?;
    let body = codec::encode(&payload.latent, depth, clip_range)?;
    let mut out = Vec::with_capacity(HEADER_BYTES + body.bytes.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&payload.label.to_be_bytes());
    out.extend_from_slice(&payload.residual_step.to_be_bytes());
    out.extend_from_slice(&d.to_be_bytes());
    out.push(depth.bits());
    out.extend_from_slice(&payload.schedule_digest.to_be_bytes());
    out.extend_from_slice(&body.bytes);
    Ok((out, body.clipped))
}

pub fn from_bytes<T: Real>(bytes: &[u8], clip_range: f64) -> Result<SemanticPayload<T>> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Wire(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Wire("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Wire(format!("unsupported version {}", bytes[4])));
    }
    let label = u16::from_be_bytes([bytes[5], bytes[6]]);
    let residual_step = u16::from_be_bytes([bytes[7], bytes[8]]);
    let d = u32::from_be_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let depth = BitDepth::from_bits(bytes[13])?;
    let schedule_digest = u64::from_be_bytes(bytes[14..22].try_into().unwrap());
    let body = &bytes[HEADER_BYTES..];
    if body.len() != d * depth.bytes() {
        return Err(Error::Wire(format!(
            "body has {} bytes, header promises {} elements of {} bits",
            body.len(),
            d,
            depth.bits()
        )));
    }
    Ok(SemanticPayload {
        latent: codec::decode(body, depth, clip_range)?,
        label,
        residual_step,
        schedule_digest,
    })
}
