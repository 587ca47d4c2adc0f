//! Plain-text experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::losses::{self, Activation};
use crate::scheduler::{self, ActionMenu, EpsilonSchedule, ScenarioGrid};
use crate::schedules::ScheduleSpec;
use crate::source::{ComponentSpec, NoiseMode, SemanticSource};
use crate::transceiver::Variant;

/// The configuration shipped in `configs/default.toml`.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed every run seed is derived from.
    pub master_seed: u64,
    /// Number of seeds per sweep point.
    pub seeds: usize,
    pub out_dir: PathBuf,
    pub variants: Vec<Variant>,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Reference draws per label for the energy distance.
    #[serde(default = "default_reference_draws")]
    pub reference_draws: usize,
    /// Latent size charged to the link; absent charges the source dimension.
    #[serde(default)]
    pub nominal_dim: Option<usize>,
    pub source: Vec<ComponentSpec>,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub channel: ChannelConfig,
    pub grid: ScenarioGrid,
    pub sweep: SweepConfig,
    pub policy: PolicyConfig,
    pub denoiser: DenoiserConfig,
}

fn default_total_steps() -> usize {
    20
}

fn default_timeout() -> f64 {
    60.0
}

fn default_reference_draws() -> usize {
    2000
}

/// How ROUTE picks its split at a sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RouteSplit {
    /// Fixed number of edge steps.
    Fixed(usize),
    Rule(SplitRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    /// Menu split with the smallest modeled latency, ties toward more edge
    /// steps.
    LatencyOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Edge-step menu shared by the sweeps and the policy learner.
    pub menu: Vec<usize>,
    pub snr: SnrAxis,
    pub compute: ComputeAxis,
}

/// Points are `grid.snr_db` at fixed compute fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrAxis {
    pub rho_edge: f64,
    pub rho_local: f64,
    pub route_split: RouteSplit,
}

/// Points are `grid.rho_edge x grid.rho_local` at a fixed SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeAxis {
    pub snr_db: f64,
    pub route_split: RouteSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub episodes: usize,
    #[serde(default = "default_eps_start")]
    pub epsilon_start: f64,
    #[serde(default = "default_eps_end")]
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly; absent means half.
    #[serde(default)]
    pub decay_episodes: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda_q: f64,
    /// Rollouts per action when comparing against the oracle.
    pub n_eval: usize,
}

fn default_eps_start() -> f64 {
    1.0
}

fn default_eps_end() -> f64 {
    0.05
}

fn default_lambda() -> f64 {
    scheduler::DEFAULT_LAMBDA_Q
}

impl PolicyConfig {
    pub fn train_config(&self) -> scheduler::TrainConfig {
        scheduler::TrainConfig {
            episodes: self.episodes,
            epsilon: EpsilonSchedule {
                start: self.epsilon_start,
                end: self.epsilon_end,
                decay_episodes: self.decay_episodes.unwrap_or(self.episodes / 2),
            },
            reward_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub mode: NoiseMode,
    /// Channel std the denoiser is trained against in channel mode.
    #[serde(default)]
    pub sigma: f64,
    pub epochs: usize,
    #[serde(default = "default_batches")]
    pub batches_per_epoch: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
}

fn default_batches() -> usize {
    20
}

fn default_batch_size() -> usize {
    32
}

fn default_clip() -> f64 {
    5.0
}

fn default_activation() -> String {
    "tanh".into()
}

fn default_eval_size() -> usize {
    512
}

impl DenoiserConfig {
    pub fn train_config(&self) -> Result<losses::TrainConfig> {
        let activation = match self.activation.as_str() {
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            other => {
                return Err(Error::Config(format!(
                    "denoiser.activation: expected `tanh` or `identity`, got `{other}`"
                )))
            }
        };
        Ok(losses::TrainConfig {
            epochs: self.epochs,
            batches_per_epoch: self.batches_per_epoch,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            hidden: self.hidden,
            activation,
            eval_size: self.eval_size,
        })
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("shipped default config parses")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn source<T: crate::Real>(&self) -> Result<SemanticSource<T>> {
        SemanticSource::from_specs(&self.source)
    }

    pub fn menu(&self) -> Result<ActionMenu> {
        ActionMenu::new(self.total_steps, self.sweep.menu.clone())
    }

    /// Structural checks that do not need numerical work; see
    /// [`crate::experiment::validate`] for the full suite.
    pub fn check(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variant list is empty".into()));
        }
        if self.total_steps == 0 || self.total_steps > self.schedule.steps {
            return Err(Error::Config(format!(
                "total_steps {} must be in 1..={}",
                self.total_steps, self.schedule.steps
            )));
        }
        if self.reference_draws < 2 {
            return Err(Error::Config("reference_draws must be at least 2".into()));
        }
        self.channel.validate()?;
        self.grid.validate()?;
        self.menu()?;
        if let RouteSplit::Fixed(t) = self.sweep.snr.route_split {
            if t > self.total_steps {
                return Err(Error::Config(format!("sweep.snr.route_split {t} exceeds total_steps")));
            }
        }
        if let RouteSplit::Fixed(t) = self.sweep.compute.route_split {
            if t > self.total_steps {
                return Err(Error::Config(format!("sweep.compute.route_split {t} exceeds total_steps")));
            }
        }
        if self.policy.episodes == 0 || self.policy.n_eval == 0 {
            return Err(Error::Config("policy.episodes and policy.n_eval must be at least 1".into()));
        }
        self.denoiser.train_config()?;
        Ok(())
    }
}
