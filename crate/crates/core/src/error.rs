use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the estimation pipeline.
///
/// Numerical failures (`DegenerateSpectrum`, `RankDeficiency`, ...) carry the
/// stage that produced them so the CLI can report it and exit with code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate spectrum at k={k}: eigenvalue {value:e} below floor {floor:e}")]
    DegenerateSpectrum { k: usize, value: f64, floor: f64 },

    #[error("rank deficiency in {stage}: singular value {k} is {value:e} (floor {floor:e})")]
    RankDeficiency {
        stage: &'static str,
        k: usize,
        value: f64,
        floor: f64,
    },

    #[error("tensor power method did not converge for component {component} after {iters} iterations")]
    NonConvergence { component: usize, iters: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("matrix is not positive semi-definite (jitter reached {jitter:e})")]
    NotPsd { jitter: f64 },

    #[error("singular system in {stage} (ridge reached {ridge:e})")]
    SingularSystem { stage: &'static str, ridge: f64 },

    #[error("degenerate cluster {component}: total posterior mass {mass:e}")]
    DegenerateCluster { component: usize, mass: f64 },

    #[error("exhaustive alignment supports K <= 8, got K={0}")]
    KTooLarge(usize),

    #[error("model is not fitted: {0}")]
    UnfittedModel(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the data or the numerical method rather
    /// than by usage. These map to exit code 2 in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSpectrum { .. }
                | Error::RankDeficiency { .. }
                | Error::NonConvergence { .. }
                | Error::NotPsd { .. }
                | Error::SingularSystem { .. }
                | Error::DegenerateCluster { .. }
        )
    }
}
