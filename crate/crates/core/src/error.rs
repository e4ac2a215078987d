//! Crate-wide error type.

use crate::training::TrainReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "density {requested} is infeasible for a {n_prev}:{n_next} junction; \
         nearest feasible densities: {nearest:?}"
    )]
    InfeasibleDensity {
        requested: f64,
        n_prev: usize,
        n_next: usize,
        nearest: Vec<f64>,
    },

    #[error("cannot partition: fan-in {fan_in} exceeds max_rows {max_rows}")]
    PartitionInfeasible { fan_in: usize, max_rows: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {detail}")]
    MalformedRow {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("{path}: format error{}: {detail}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format {
        path: String,
        offset: Option<u64>,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged {
        epoch: usize,
        report: Box<TrainReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::InfeasibleDensity { .. }
            | Error::PartitionInfeasible { .. }
            | Error::DimensionMismatch { .. }
            | Error::Config(_) => 2,
            Error::MalformedRow { .. }
            | Error::Format { .. }
            | Error::Data(_)
            | Error::Io(_) => 3,
            Error::NonFinite(_) | Error::Diverged { .. } => 4,
        }
    }
}
