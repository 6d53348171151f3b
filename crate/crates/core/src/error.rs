use thiserror::Error;

/// Errors produced by the simulation, verification and I/O layers.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("covariance must be diagonal for this operation")]
    NotDiagonal,

    #[error("rotated configurations have no axis-aligned true covariance")]
    RotatedConfig,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("step size {step} is unstable for spectral radius {radius}")]
    UnstableStep { step: f64, radius: f64 },

    #[error("simulation diverged at step {step}: |w[{i}][{j}]| = {value:e}")]
    Divergence {
        step: usize,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("direction has zero signal and never converges")]
    NeverConverges,

    #[error("no valid constants: {0}")]
    NoValidConstants(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("trajectory lacks decomposition records")]
    MissingDecomposition,

    #[error("lattice too large: s = {0} (maximum 16)")]
    LatticeTooLarge(usize),

    #[error("{0}")]
    Scope(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
