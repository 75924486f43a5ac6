use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("linear system has no solution within tolerance (relative residual {residual:.3e})")]
    Unsolvable { residual: f64 },

    #[error("pencil too ill-conditioned to confirm candidate zero {re:+.6e}{im:+.6e}i (relative sigma {sigma:.3e})")]
    IllConditionedPencil { re: f64, im: f64, sigma: f64 },

    #[error("eigenvalue iteration did not converge")]
    EigenFailure,

    #[error("frequency {mu} lies within the exclusion radius of invariant zero {zero}")]
    FrequencyIsZero { mu: f64, zero: String },

    #[error("subspace dimension still growing after exhausting a pool of {pool} frequencies")]
    SaturationFailure { pool: usize },

    #[error("basis of dimension {expected} stayed rank deficient ({achieved}) after {retries} retries")]
    RankDeficientAfterRetries {
        expected: usize,
        achieved: usize,
        retries: usize,
    },

    #[error("mode {lambda} is not stable for the {domain} time domain")]
    UnstableLambda { lambda: f64, domain: &'static str },

    #[error("mode {lambda} coincides with invariant zero {zero}")]
    LambdaAtZero { lambda: f64, zero: f64 },

    #[error("subset enumeration over {p} outputs exceeds the limit of {limit}")]
    TooManyOutputs { p: usize, limit: usize },

    #[error("direction for output {output} has vanishing output gain after {retries} retries")]
    DegenerateDirection { output: usize, retries: usize },

    #[error("monotonic tracking is not solvable: {0}")]
    NotSolvable(String),

    #[error("standing assumptions violated: {0}")]
    AssumptionFailed(String),

    #[error("closed-loop consistency check failed: {0}")]
    UnstableResult(String),

    #[error("closed loop is not asymptotically stable (spectral abscissa {0:.6e})")]
    UnstableClosedLoop(f64),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("invalid replay input: {0}")]
    InvalidReplay(String),

    #[error("system generation failed after {0} attempts")]
    GenerationFailed(usize),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the batch front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotSolvable(_) => 2,
            Error::AssumptionFailed(_) => 3,
            Error::Io(_) | Error::Json(_) | Error::InvalidSpec(_) | Error::InvalidReplay(_) => 1,
            Error::InvalidSystem(_) | Error::DimensionMismatch(_) => 1,
            _ => 4,
        }
    }
}
