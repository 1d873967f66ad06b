use thiserror::Error;

use crate::circuit::GateKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no error model supplied for gate kind {0}")]
    MissingModel(GateKind),
    #[error("repetition code distance must be at least 2, got {0}")]
    InvalidDistance(usize),
    #[error("{label:?} is not a legal Pauli term for a {kind} gate")]
    IllegalLabel { kind: GateKind, label: String },
    #[error("term {label:?} has invalid probability {value}")]
    InvalidProbability { label: String, value: f64 },
    #[error("term probabilities sum to {0}, which exceeds 1")]
    ProbabilitySum(f64),
    #[error("unknown gate id {0:?}")]
    UnknownGate(String),
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error("record was produced by circuit {found}, expected {expected}")]
    CircuitMismatch { expected: String, found: String },
    #[error("cluster holds {0} events, more than the classifier accepts")]
    ClusterTooLarge(usize),
    #[error("expected schema {expected:?}, found {found:?}")]
    Schema { expected: String, found: String },
    #[error("malformed measurement record: {0}")]
    Record(String),
    #[error("constraint system: {0}")]
    System(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
