//! Small multilayer perceptrons with explicit forward/backward passes, a
//! fixed projection layer between encoder and heads, and SGD/Adam updates.

mod checkpoint;
mod mlp;
mod network;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use mlp::{Activation, DenseLayer, GradientBundle, MlpCache, MlpNetwork};
pub use network::{BottleneckedNetwork, NetworkCache, NetworkGradients};
pub use optim::{apply_adam, apply_sgd, Adam};

use std::io;

use thiserror::Error;

use crate::projection::ProjectionError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown head {0:?}")]
    UnknownHead(String),
    #[error("stale cache: recorded at version {cache}, network is at {network}")]
    StaleCache { cache: u64, network: u64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("network needs at least one layer and one head")]
    EmptyNetwork,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
