//! Split diffusion content delivery over a noisy wireless link.
//!
//! An edge transmitter runs part of a reverse diffusion chain, sends the
//! partially denoised latent over an AWGN channel, and the receiver finishes
//! the chain with a channel-aware reverse process that removes the semantic
//! noise step by step. The crate provides the schedules and kernels, an
//! analytic semantic source with closed-form noise predictors, the channel
//! codec and wire format, a latency model, a step-split policy learner and
//! an experiment harness.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the `*32` and
//! `*64` aliases below name the concrete instantiations.

pub mod channel;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod scheduler;
pub mod schedules;
pub mod source;
pub mod transceiver;

pub use error::{Error, Result};
pub use scalar::Real;

pub use diffusion::Latent;
pub use schedules::{ChannelNoiseSchedule, VarianceSchedule};
pub use source::{OracleDenoiser, SemanticSource};

pub type Latent32 = Latent<f32>;
pub type Latent64 = Latent<f64>;
pub type VarianceSchedule32 = VarianceSchedule<f32>;
pub type VarianceSchedule64 = VarianceSchedule<f64>;
pub type ChannelNoiseSchedule32 = ChannelNoiseSchedule<f32>;
pub type ChannelNoiseSchedule64 = ChannelNoiseSchedule<f64>;
pub type SemanticSource32 = SemanticSource<f32>;
pub type SemanticSource64 = SemanticSource<f64>;
pub type TinyDenoiser32 = losses::TinyDenoiser<f32>;
pub type TinyDenoiser64 = losses::TinyDenoiser<f64>;
