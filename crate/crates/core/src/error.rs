// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad user-supplied configuration (multiplier, sparsity, bit width, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// A graph or tensor whose shape violates an invariant.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{what} out of range: {value} (allowed {allowed})")]
    OutOfRange {
        what: &'static str,
        value: String,
        allowed: String,
    },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("BN scale {gamma} cannot be encoded at shift {shift}")]
    BnEncoding { gamma: f64, shift: u32 },
    /// The netlist does not describe a consistent datapath.
    #[error("structural inconsistency: {0}")]
    Structure(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(what: &'static str, value: impl ToString, allowed: impl ToString) -> Self {
        Error::OutOfRange {
            what,
            value: value.to_string(),
            allowed: allowed.to_string(),
        }
    }

    /// True for failures caused by the caller's inputs rather than a defect
    /// in the toolchain itself.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Overflow(_) | Error::Structure(_))
    }
}
