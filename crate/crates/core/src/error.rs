use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("basis of {size} terms exceeds the cap of {cap}")]
    BasisTooLarge { size: usize, cap: usize },

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("coordinate {coord} value {value} lies outside the open support")]
    OutOfSupport { coord: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("infeasible operating point: {0}")]
    Infeasible(String),

    #[error("map Jacobian is not finite at z = {z:?}")]
    MapIrregular { z: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error("{failed} of {total} batch evaluations failed (first indices: {indices:?})")]
    PartialBatch {
        failed: usize,
        total: usize,
        indices: Vec<usize>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping `Stage` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
