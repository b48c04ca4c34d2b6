use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(
        "least-squares system is rank deficient (rank {rank} < {cols} columns) with lambda = 0; \
         use a positive Tikhonov parameter lambda"
    )]
    RankDeficient { rank: usize, cols: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("block {0} is missing its z-dependent (primed) parameters")]
    MissingPrimed(usize),

    #[error("spectrum is identically zero (empty spectrum)")]
    EmptySpectrum,

    #[error("frequency grid too coarse: refinement change {change:.3e} exceeds tolerance {tol:.1e} at {panels} panels")]
    GridTooCoarse { change: f64, tol: f64, panels: usize },

    #[error("non-finite loss; first offending parameter index {index:?}")]
    NonFiniteLoss { index: Option<usize> },

    #[error("optimizer diverged at epoch {epoch}: loss {loss:.3e}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("{0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("failed checks: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig { .. } | Error::UnknownTarget(_) | Error::Parse(_))
    }

    /// A stable lowercase tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::MissingPrimed(_) => "missing_primed",
            Error::EmptySpectrum => "empty_spectrum",
            Error::GridTooCoarse { .. } => "grid_too_coarse",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Diverged { .. } => "diverged",
            Error::UnknownTarget(_) => "unknown_target",
            Error::Parse(_) => "parse",
            Error::InvalidInput(_) => "invalid_input",
            Error::ChecksFailed(_) => "checks_failed",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
