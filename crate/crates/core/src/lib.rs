//! Classical-to-quantum transfer learning laboratory.
//!
//! Pre-trains a small CNN on Fashion-MNIST, freezes it as a 256-feature
//! extractor, and fine-tunes either a simulated 8-qubit quantum
//! convolutional network (QCNN) head or small classical CNN heads on
//! MNIST binary tasks. Ships an exact statevector simulator with analytic
//! gradients, an ansatz catalog, a from-scratch NN stack with Adam, IDX
//! data loading, and Welch's t-test reporting.

pub mod circuit;
pub mod data;
pub mod density;
pub mod encoding;
pub mod gates;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod stats;
pub mod zoo;

mod util;

#[cfg(feature = "parallel")]
pub use util::map_collect_par;
pub use util::{map_collect, map_collect_seq, sha256_hex};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("qubit index {index} out of range for {num_qubits} qubits")]
    QubitOutOfRange { index: usize, num_qubits: usize },
    #[error("duplicate qubit indices in gate application")]
    DuplicateQubits,
    #[error("parameter count mismatch: expected {expected}, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("IDX parse error: {0}")]
    Idx(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
