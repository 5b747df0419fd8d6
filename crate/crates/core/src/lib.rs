//! Weighted sum-rate beamforming for 1-layer rate-splitting multiple access
//! (RSMA) over a multi-antenna broadcast channel.
//!
//! The solver alternates closed-form fractional-programming auxiliary
//! updates with a dual fixed-point iteration over a closed-form beamforming
//! structure, so no general-purpose convex solver is needed.
//!
//! - [`model`]: channels, SINRs, rates and WSR evaluation.
//! - [`fp`]: quadratic-transform surrogates and their auxiliaries.
//! - [`beamstruct`]: structured beamformers and HFPI.
//! - [`solver`]: the outer alternating optimization.
//! - [`oracle`]: slow independent references used for validation.
//! - [`montecarlo`]: the randomized benchmark harness.

pub mod beamstruct;
pub mod config;
pub mod error;
pub mod fp;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod solver;

pub use nalgebra;
pub use num_complex;

pub use beamstruct::{DualState, InnerOutcome, KktResiduals, StructureCoefficients};
pub use config::{RateUnit, SystemConfig};
pub use error::{Result, RsmaError};
pub use fp::AuxiliaryState;
pub use model::{BeamformingMatrix, ChannelFile, ChannelMatrix, RateReport, Stream};
pub use solver::{solve, solve_sdma, Solution};
