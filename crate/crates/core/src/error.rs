use thiserror::Error;

use crate::setup::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state has no nonzero amplitude")]
    ZeroState,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("OAM value {ell} outside truncation bound {bound}")]
    OutOfBounds { ell: i64, bound: u32 },
    #[error("ket is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("invalid density operator: {0}")]
    InvalidDensity(String),
    #[error("pump OAM {0} is odd; only even pump OAM splits symmetrically")]
    UnsupportedPump(i32),
    #[error("chain has no crystal stage")]
    EmptyChain,
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("chain is not in canonical form: {0}")]
    Shape(String),
    #[error("distinguishability model: {0}")]
    Model(String),
    #[error("tomography design is not informationally complete (rank {rank} < {required})")]
    Incomplete { rank: usize, required: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("fringe fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The chain stage index an error refers to, if any.
    pub fn stage(&self) -> Option<usize> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
