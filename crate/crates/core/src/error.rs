//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cluster indices start at 1 (got ({i}, {j}))")]
    ZeroKernelIndex { i: usize, j: usize },

    #[error("table kernel lookup ({i}, {j}) out of range; rates defined for 1..={n_max}")]
    TableIndexOutOfRange { i: usize, j: usize, n_max: usize },

    #[error("growth classification is not defined for table kernels")]
    UnclassifiableKernel,

    #[error("kernel has no separable power form; use the reference path")]
    NonSeparableKernel,

    #[error("{what}: expected length {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("L^p norms require p >= 1, got p = {p}")]
    InvalidExponent { p: f64 },

    #[error(
        "reaction step at t = {t} kept producing negative entries after {halvings} dt-halvings \
         (worst entry {worst:e})"
    )]
    StepRejectionExhausted { t: f64, halvings: u32, worst: f64 },

    #[error("duality ratio is undefined for zero forcing")]
    ZeroForcing,

    #[error(
        "contraction did not converge within {max_iters} iterations (last update ratio \
         {last_ratio}); the closeness condition is likely violated"
    )]
    ContractionDiverged { max_iters: usize, last_ratio: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code contract: 2 = usage/config, 3 = solver abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) => 2,
            Error::StepRejectionExhausted { .. } | Error::ContractionDiverged { .. } => 3,
            _ => 2,
        }
    }
}
