//! Model backends behind the classifier, embedder and generator interfaces.
//!
//! `local` holds the offline, seeded stand-ins; `remote` speaks JSON over
//! HTTP to an external inference service.

pub mod local;
pub mod remote;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{endpoint}: timed out after {timeout_ms} ms")]
    Timeout { endpoint: String, timeout_ms: u64 },
    #[error("{endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint}: HTTP {status}")]
    Status { endpoint: String, status: u16 },
    #[error("{endpoint}: malformed response: {message}")]
    Malformed { endpoint: String, message: String },
    #[error("expected {expected} logits, backend returned {got}")]
    WrongK { expected: usize, got: usize },
    #[error("{0}")]
    Local(String),
}

impl BackendError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, BackendError::Timeout { .. })
    }
}
