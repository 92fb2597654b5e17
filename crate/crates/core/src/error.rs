use std::path::PathBuf;

use thiserror::Error;

use crate::ledger::Cid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class {class} has {count} training samples, at least 2 are required")]
    SparseClass { class: u32, count: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("verifier calibration failed: {0}")]
    Calibration(String),

    #[error("content not found: {0}")]
    NotFound(Cid),

    #[error("stored content does not hash to {0}")]
    Corrupt(Cid),

    #[error("transaction rejected: {0}")]
    Rejected(String),

    #[error("lineage invalid at {cid}: {reason}")]
    Lineage { cid: Cid, reason: String },

    #[error("ledger log invalid: {0}")]
    LedgerLog(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::Rejected(msg.into())
    }

    pub(crate) fn lineage(cid: &Cid, reason: impl Into<String>) -> Self {
        Error::Lineage {
            cid: cid.clone(),
            reason: reason.into(),
        }
    }
}
