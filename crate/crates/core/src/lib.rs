//! Numerical laboratory for truncated coagulation-diffusion systems on the
//! unit interval with homogeneous Neumann boundary conditions.
//!
//! The crate simulates the finite n-species Smoluchowski system
//!
//! ```text
//! d/dt c_i - d_i Lap c_i = Q_i(c),   i = 1..n,
//! Q_i(c) = 1/2 sum_{j<i} a_{i-j,j} c_{i-j} c_j - c_i sum_{j<=n-i} a_{i,j} c_j,
//! ```
//!
//! and probes its quantitative structure at desk scale: exact mass nullity of
//! the coagulation operator, mass conservation along the split flow, moment
//! propagation in space-time L^p norms, gelation signatures for superlinear
//! rate kernels, the parabolic duality constant of the constant-coefficient
//! Neumann heat equation, and a contraction solver for non-divergence heat
//! equations with discontinuous bounded coefficients.
//!
//! All field and operator math is generic over [`Scalar`] (`f32` or `f64`);
//! [`Real`] is the default precision used by the CLI and the experiment
//! drivers.

pub mod coagulation;
pub mod config;
pub mod duality;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernels;
pub mod report;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::{FftScalar, Scalar};

/// Default floating-point precision for binaries, experiments and reports.
pub type Real = f64;

/// Rate kernel at default precision.
pub type Kernel = kernels::KernelSpec<Real>;
/// Simulator state at default precision.
pub type Field = simulator::ClusterField<Real>;
/// Simulation configuration at default precision.
pub type Config = simulator::SimConfig<Real>;
