//! Numerical laboratory for the stochastic reaction-diffusion equation
//! `u̇ = ½u″ + b(u) + σ(u)ξ` on `[0, 1]` with zero Dirichlet data.

pub mod bounds;
pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod heat_kernel;
pub mod noise;
pub mod quad;
pub mod solver;
pub mod stats;

/// Version tag written into every output file.
pub const SCHEMA_VERSION: u32 = 1;

pub use error::{LabError, Result};
pub use heat_kernel::{GridFunction, HeatKernel};
