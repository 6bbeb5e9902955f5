use thiserror::Error;

/// Errors raised by the simulator and its analysis tools.
#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("symbol is singular at xi = 0 and the zero-mode coefficient is {magnitude:e}")]
    ZeroModeSingularity { magnitude: f64 },

    #[error("dyadic block {j} outside resolved range [{min}, {max}]")]
    Range { j: i32, min: i32, max: i32 },

    #[error("interval [{start}, {end}] not covered by samples on [{first}, {last}]")]
    Coverage {
        start: f64,
        end: f64,
        first: f64,
        last: f64,
    },

    #[error("Picard iteration failed to contract; measured factors {factors:?}")]
    ContractionFailure { factors: Vec<f64> },

    #[error("rescaled profile not representable on the lattice: {0}")]
    Alias(String),

    #[error("parameter tracks are not asymptotically orthogonal: {0}")]
    Orthogonality(String),

    #[error("invalid trajectory status: {0}")]
    InvalidStatus(String),

    #[error("unsupported dimension {dim} for {what}")]
    InvalidDimension { dim: usize, what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KgError>;
