//! End-to-end delivery pipelines: the split edge/receiver scheme and the
//! three reference designs it is compared against.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig, SemanticPayload};
use crate::diffusion::{self, Latent, NoisePredictor};
use crate::error::{Error, Result};
use crate::metrics::{self, FidelityReference, Latency, ResourceScenario};
use crate::scalar::Real;
use crate::schedules::{float17, ChannelNoiseSchedule, ScheduleSpec, VarianceSchedule};
use crate::source::{NoiseMode, OracleDenoiser, SemanticSource};

/// Ratio of pixel-space content (512 x 512 x 3) to the latent (4 x 64 x 64).
pub const EXPANSION_FACTOR: u64 = 48;
/// Latent size used for payload accounting: 4 x 64 x 64.
pub const NOMINAL_LATENT_DIM: usize = 4 * 64 * 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Edge denoises `t_edge` steps, the receiver fine-tunes the rest.
    #[serde(rename = "ROUTE")]
    Route,
    /// Edge denoises every step; the receiver keeps the noisy latent.
    NonFineTuning,
    /// Edge generates and ships the decoded content over the link.
    #[serde(rename = "EdgeAIGC")]
    EdgeAigc,
    /// The receiver generates everything locally.
    #[serde(rename = "LocalAIGC")]
    LocalAigc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Route,
        Variant::NonFineTuning,
        Variant::EdgeAigc,
        Variant::LocalAigc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Route => "ROUTE",
            Variant::NonFineTuning => "NonFineTuning",
            Variant::EdgeAigc => "EdgeAIGC",
            Variant::LocalAigc => "LocalAIGC",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub t_edge: usize,
    pub t_local: usize,
    pub total_steps: usize,
    /// Codec depth, signal power and clip range. The link SNR and bandwidth
    /// come from the [`ResourceScenario`] of each run.
    pub channel: ChannelConfig,
    /// Runs whose modeled latency exceeds this are flagged failed.
    pub timeout_s: f64,
    /// Latent size charged to the link; `None` charges the actual dimension.
    pub nominal_dim: Option<usize>,
}

impl PipelineConfig {
    /// Canonical wiring of a variant: ROUTE takes the given split, the
    /// others are forced to their fixed split.
    pub fn new(variant: Variant, t_edge: usize, total_steps: usize, channel: ChannelConfig) -> Self {
        let t_edge = match variant {
            Variant::Route => t_edge.min(total_steps),
            Variant::NonFineTuning | Variant::EdgeAigc => total_steps,
            Variant::LocalAigc => 0,
        };
        Self {
            variant,
            t_edge,
            t_local: total_steps - t_edge,
            total_steps,
            channel,
            timeout_s: 60.0,
            nominal_dim: Some(NOMINAL_LATENT_DIM),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_edge + self.t_local != self.total_steps {
            return Err(Error::Invariant(format!(
                "t_edge {} + t_local {} != total {}",
                self.t_edge, self.t_local, self.total_steps
            )));
        }
        let ok = match self.variant {
            Variant::Route => true,
            Variant::NonFineTuning | Variant::EdgeAigc => self.t_local == 0,
            Variant::LocalAigc => self.t_edge == 0,
        };
        if !ok {
            return Err(Error::Invariant(format!(
                "{} cannot run split ({}, {})",
                self.variant, self.t_edge, self.t_local
            )));
        }
        if self.total_steps > u16::MAX as usize {
            return Err(Error::param("total_steps", "exceeds the wire format's u16"));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::param("timeout_s", "must be positive"));
        }
        Ok(())
    }

    fn charged_dim(&self, actual: usize) -> usize {
        self.nominal_dim.unwrap_or(actual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRecord<T> {
    pub variant: Variant,
    pub label: u16,
    pub snr_db: f64,
    pub rho_edge: f64,
    pub rho_local: f64,
    pub t_edge: usize,
    pub t_local: usize,
    pub latent: Latent<T>,
    pub o_bits: u64,
    pub latency: Latency,
    pub failed: bool,
    pub mse: f64,
    pub component_acc: f64,
    pub energy_dist: f64,
    pub seed: u64,
}

impl<T: Real> TranscriptRecord<T> {
    pub fn total_latency(&self) -> f64 {
        self.latency.total()
    }
}

pub const TRANSCRIPT_HEADER: [&str; 17] = [
    "variant",
    "label",
    "snr_db",
    "rho_edge",
    "rho_local",
    "t_edge",
    "t_local",
    "O_bits",
    "L1_s",
    "L2_s",
    "L3_s",
    "L_s",
    "failed",
    "mse",
    "component_acc",
    "energy_dist",
    "seed",
];

/// Writes transcripts as CSV with 17-significant-digit floats.
pub fn write_transcripts<T: Real, W: Write>(records: &[TranscriptRecord<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRANSCRIPT_HEADER)?;
    for r in records {
        w.write_record([
            r.variant.name().to_string(),
            r.label.to_string(),
            float17(r.snr_db),
            float17(r.rho_edge),
            float17(r.rho_local),
            r.t_edge.to_string(),
            r.t_local.to_string(),
            r.o_bits.to_string(),
            float17(r.latency.l1),
            float17(r.latency.l2),
            float17(r.latency.l3),
            float17(r.latency.total()),
            r.failed.to_string(),
            float17(r.mse),
            float17(r.component_acc),
            float17(r.energy_dist),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shared state of one experiment: the source, the schedule both ends agree
/// on and the fidelity references.
#[derive(Debug, Clone)]
pub struct Pipeline<'a, T> {
    source: &'a SemanticSource<T>,
    spec: ScheduleSpec,
    vs: VarianceSchedule<T>,
    clean: ChannelNoiseSchedule<T>,
    digest: u64,
    references: Vec<FidelityReference>,
}

impl<'a, T: Real> Pipeline<'a, T> {
    /// Builds the schedule and draws `reference_draws` samples per label
    /// from the true conditionals.
    pub fn new<R: Rng + ?Sized>(
        source: &'a SemanticSource<T>,
        spec: &ScheduleSpec,
        reference_draws: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let vs = spec.variance_schedule::<T>()?;
        let clean = ChannelNoiseSchedule::clean(vs.steps(), &vs)?;
        let references = source
            .labels()
            .map(|label| FidelityReference::new(source, label, reference_draws, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source,
            spec: spec.clone(),
            vs,
            clean,
            digest: spec.digest(),
            references,
        })
    }

    pub fn source(&self) -> &SemanticSource<T> {
        self.source
    }

    pub fn schedule(&self) -> &VarianceSchedule<T> {
        &self.vs
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn reference(&self, label: u16) -> Result<&FidelityReference> {
        self.references
            .iter()
            .find(|r| r.label == label)
            .ok_or(Error::UnknownLabel(label))
    }

    /// Clean-mode oracle used by the edge and by local generation.
    pub fn edge_oracle(&self) -> OracleDenoiser<'_, T> {
        OracleDenoiser::new(self.source, &self.clean, NoiseMode::Clean)
    }

    /// Receiver schedule over `residual_step` steps carrying channel std
    /// `sigma`.
    pub fn receiver_schedule(&self, residual_step: usize, sigma: f64) -> Result<ChannelNoiseSchedule<T>> {
        self.spec.channel_schedule(&self.vs, residual_step, sigma)
    }

    /// Runs the first `t_edge` reverse steps from pure noise at level
    /// `total_steps`.
    pub fn edge_encode<P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
        &self,
        label: u16,
        t_edge: usize,
        total_steps: usize,
        denoiser: &P,
        rng: &mut R,
    ) -> Result<SemanticPayload<T>> {
        if t_edge > total_steps || total_steps > self.vs.steps() {
            return Err(Error::param(
                "t_edge",
                format!("split {t_edge} of {total_steps} does not fit T = {}", self.vs.steps()),
            ));
        }
        let residual = total_steps - t_edge;
        let z = Latent::standard_normal(self.source.dim(), rng);
        let latent = diffusion::denoise_standard(z, total_steps, residual, label, denoiser, &self.vs, rng)?;
        Ok(SemanticPayload {
            latent,
            label,
            residual_step: u16::try_from(residual)
                .map_err(|_| Error::param("total_steps", "exceeds the wire format's u16"))?,
            schedule_digest: self.digest,
        })
    }

    /// Receiver fine-tuning over `cs` (built for the payload's residual
    /// steps).
    pub fn local_decode<P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
        &self,
        received: SemanticPayload<T>,
        denoiser: &P,
        cs: &ChannelNoiseSchedule<T>,
        rng: &mut R,
    ) -> Result<Latent<T>> {
        received.verify_digest(self.digest)?;
        if cs.t_bar() != received.residual_step as usize {
            return Err(Error::param(
                "cs",
                format!(
                    "receiver schedule covers {} steps, payload needs {}",
                    cs.t_bar(),
                    received.residual_step
                ),
            ));
        }
        diffusion::finetune(received.latent, received.label, denoiser, cs, rng)
    }

    /// Executes one variant end to end with oracle denoisers. The rng draws,
    /// in order: the initial noise, the edge steps, the channel noise and
    /// the receiver steps.
    pub fn run<R: Rng + ?Sized>(
        &self,
        cfg: &PipelineConfig,
        label: u16,
        scenario: &ResourceScenario,
        seed: u64,
        rng: &mut R,
    ) -> Result<TranscriptRecord<T>> {
        cfg.validate()?;
        scenario.validate()?;
        let link = ChannelConfig {
            snr_db: scenario.snr_db,
            bandwidth_hz: scenario.bandwidth_hz,
            ..cfg.channel.clone()
        };
        let clip = link.clip_range.unwrap_or_else(|| self.source.clip_range());
        let sigma = link.noise_std()?;
        let bits = channel::payload_bits_for_dim(cfg.charged_dim(self.source.dim()), link.bits_per_element);
        let edge = self.edge_oracle();
        let total = cfg.total_steps;

        let (latent, o_bits) = match cfg.variant {
            Variant::LocalAigc => (self.generate_locally(label, total, rng)?, 0),
            Variant::Route if cfg.t_edge == 0 => (self.generate_locally(label, total, rng)?, 0),
            Variant::Route | Variant::NonFineTuning => {
                let payload = self.edge_encode(label, cfg.t_edge, total, &edge, rng)?;
                let (received, _) = channel::link(&payload, &link, clip, rng)?;
                let latent = if cfg.variant == Variant::NonFineTuning {
                    received.latent
                } else {
                    let cs = self.receiver_schedule(received.residual_step as usize, sigma)?;
                    let local = OracleDenoiser::new(self.source, &cs, NoiseMode::Channel);
                    self.local_decode(received, &local, &cs, rng)?
                };
                (latent, bits)
            }
            Variant::EdgeAigc => {
                let payload = self.edge_encode(label, total, total, &edge, rng)?;
                let received = channel::transmit(&payload, &link, rng)?;
                (received.latent, EXPANSION_FACTOR * bits)
            }
        };

        let latency = Latency {
            l1: metrics::transmission_latency(o_bits, scenario),
            l2: metrics::compute_latency(cfg.t_edge, scenario.c_edge, scenario.rho_edge),
            l3: metrics::compute_latency(cfg.t_local, scenario.c_local, scenario.rho_local),
        };
        let fid = metrics::fidelity(std::slice::from_ref(&latent), self.source, self.reference(label)?)?;
        Ok(TranscriptRecord {
            variant: cfg.variant,
            label,
            snr_db: scenario.snr_db,
            rho_edge: scenario.rho_edge,
            rho_local: scenario.rho_local,
            t_edge: cfg.t_edge,
            t_local: cfg.t_local,
            latent,
            o_bits,
            latency,
            failed: latency.total() > cfg.timeout_s,
            mse: fid.mse,
            component_acc: fid.component_accuracy,
            energy_dist: fid.energy_distance,
            seed,
        })
    }

    /// Standard generation of `steps` steps at the receiver.
    pub fn generate_locally<R: Rng + ?Sized>(&self, label: u16, steps: usize, rng: &mut R) -> Result<Latent<T>> {
        diffusion::generate(self.source.dim(), steps, label, &self.edge_oracle(), &self.vs, rng)
    }
}
