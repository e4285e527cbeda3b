use thiserror::Error;

/// Errors raised anywhere in the certification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("set syntax error: {0}")]
    SetSyntax(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("expression syntax error at position {position}: {message}")]
    ExprSyntax { position: usize, message: String },

    #[error("unknown identifier `{0}` in expression")]
    UnknownIdentifier(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("Nyquist violation: lattice resolution {resolution} must exceed 2 * f_max = {}", 2 * .f_max)]
    Nyquist { f_max: usize, resolution: usize },

    #[error(
        "lattice too coarse: tightening denominator {denominator:.3e} for {set} is not positive; \
         increase lattice_resolution or reduce num_frequencies"
    )]
    LatticeTooCoarse { set: &'static str, denominator: f64 },

    #[error("unknown LP backend `{0}`")]
    UnknownBackend(String),

    #[error("LP backend `{0}` is not available in this build; use `SimplexOptimiser` or export the LP")]
    BackendUnavailable(String),

    #[error("objective undefined: {0}")]
    Objective(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
