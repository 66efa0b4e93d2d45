//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by system evaluation, data generation, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("system `{system}` is missing parameter `{name}`")]
    MissingParameter { system: String, name: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("integrator blow-up in system `{system}` at step {step} (h = {h:e})")]
    IntegratorBlowup {
        system: String,
        step: usize,
        h: f64,
    },

    #[error("integrator blow-up while generating sample {sample}: {source}")]
    SampleBlowup {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch between parameters and architecture: {0}")]
    ShapeMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("domain is empty or inverted at component {component}")]
    EmptyDomain { component: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("holdout split with fraction {fraction} would leave a side empty (J = {total})")]
    DegenerateSplit { fraction: f64, total: usize },

    #[error("training loss became non-finite at epoch {epoch}")]
    DivergentLoss { epoch: usize },

    #[error(
        "dataset contains coarse pairs (k = {max_k} > 1); use transfer_learn_recurrent for \
         coarse high-fidelity data"
    )]
    CoarsePairsPresent { max_k: u32 },

    #[error("non-finite state while unrolling sample {sample} at composition depth {depth}")]
    UnrollBlowup { sample: usize, depth: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("failed to parse `{path}`: {reason}")]
    Parse { path: String, reason: String },

    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a path to an `std::io::Error`.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
