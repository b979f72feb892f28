//! Worldline Monte Carlo for TE-polarization Casimir and Casimir-Polder
//! energies of planar dielectric media, with analytic oracles.
//!
//! Natural units throughout: hbar = c = eps0 = 1.

pub mod accelerated;
pub mod analytic;
pub mod bridges;
pub mod engine;
pub mod error;
pub mod media;
pub mod quadrature;
pub mod rng;
pub mod sojourn;
pub mod special;
pub mod stats;
pub mod thermal;

pub use bridges::{BridgeEnsemble, ScaledPath, StandardBridge};
pub use engine::{CpMode, Estimator, Reduction, RunConfig, RunResult};
pub use error::{Error, Result};
pub use media::{DielectricProfile, PhysicalConstants, Susceptibility};
pub use rng::RngStreamSpec;
pub use sojourn::{SojournDensity, SojournParams, SojournTables};
pub use stats::EstimatorAccumulator;
pub use thermal::{DispersionModel, ThermalConfig};
