use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("time {t} outside horizon [{t0}, {tf}]")]
    Domain { t: f64, t0: f64, tf: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("malformed conic program: {0}")]
    MalformedProgram(String),

    #[error("conic solver returned {status:?} while {context}")]
    Solver { status: SolveStatus, context: String },

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("inconsistent dual solution: {0}")]
    Inconsistent(String),

    #[error("input reconstruction failed: {0}")]
    Reconstruction(String),
}
