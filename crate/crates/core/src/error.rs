//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::milp::MilpError;
use crate::proplace::IterationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} values, got {found}")]
    InputShape { expected: usize, found: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("invalid model shift bound {0}: delta must be finite and > 0")]
    InvalidShift(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },

    #[error("no candidate points of the desired class")]
    NoCandidates,

    #[error("insufficient robust neighbours: found {found} of the {required} required")]
    InsufficientRobustNeighbours { found: usize, required: usize },

    #[error("input is already classified as the desired class (logit {0})")]
    InputAlreadyDesired(f64),

    #[error("outer minimisation is infeasible: no counterfactual inside the plausible region")]
    NoFeasibleCe,

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize, trace: Vec<IterationRecord> },

    #[error("certification inconclusive: solver hit its time limit")]
    CertificationInconclusive,

    #[error("solver time limit reached")]
    SolverTimeout,

    #[error("big-M encoding error: {0}")]
    Encoding(String),

    #[error("reference set too small: need at least {needed} points, got {found}")]
    InsufficientReference { needed: usize, found: usize },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Milp(#[from] MilpError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for outcomes that are a legitimate "no explanation exists" answer
    /// rather than a failure of the machinery.
    pub fn is_reported_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::InsufficientRobustNeighbours { .. }
                | Error::NoFeasibleCe
                | Error::NoCandidates
                | Error::InputAlreadyDesired(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::InputShape { expected, found })
    }
}
