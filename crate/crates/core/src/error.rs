use thiserror::Error;

use crate::data::DataError;
use crate::phy::PhyError;
use crate::synth::SynthError;
use crate::tensor::TensorError;

/// Crate-level error; each variant names the subsystem it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("nr-phy: {0}")]
    Phy(#[from] PhyError),
    #[error("trace-data: {0}")]
    Data(#[from] DataError),
    #[error("trace-synth: {0}")]
    Synth(#[from] SynthError),
    #[error("predictors: {0}")]
    Model(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("train: loss became non-finite at epoch {epoch}, step {step} (last finite loss {last_loss})")]
    Diverged { epoch: usize, step: usize, last_loss: f64 },
    #[error("train-eval: {0}")]
    Eval(String),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::Tensor(TensorError::NonFinite { .. }))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
