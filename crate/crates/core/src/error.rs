use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A schedule or source failed one of its structural invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The channel-noise normalization cannot place every gamma strictly
    /// increasing inside (0, 1).
    #[error("infeasible gamma normalization: {0}")]
    Infeasible(String),

    #[error("step {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown conditioning label {0}")]
    UnknownLabel(u16),

    #[error("quadrature did not converge (residual estimate {residual:e})")]
    Quadrature { residual: f64 },

    #[error("wire format: {0}")]
    Wire(String),

    #[error("schedule digest mismatch: payload {payload:016x}, receiver {receiver:016x}")]
    DigestMismatch { payload: u64, receiver: u64 },

    #[error("training diverged at epoch {epoch}: loss {loss} exceeds 10x initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("value {value} at episode {episode} exceeds the reward bound {bound}")]
    ValueBound { episode: usize, value: f64, bound: f64 },

    #[error("singular forward identity at step {t}: noise scale is zero")]
    Singular { t: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Validation failures (bad config, violated invariants) as opposed to
    /// runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invariant(_)
                | Error::InvalidParameter { .. }
                | Error::Infeasible(_)
                | Error::Config(_)
                | Error::UnknownLabel(_)
        )
    }
}
