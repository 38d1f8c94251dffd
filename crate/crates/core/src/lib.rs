//! Stationary Rayleigh-Benard-Marangoni convection in a box: staggered
//! finite-volume state solver, discrete adjoint, and projected-gradient
//! boundary control with fractional boundary norms.

pub mod adjoint_solver;
mod error;

pub mod controls;
pub mod discrete;
pub mod forms;
pub mod grid;
pub mod identities;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod params;
pub mod state_solver;

pub use error::{Error, Result};
pub use grid::{BoundaryField, BoundaryRegion, BoxGrid, ControlPartition, RegionTag, ScalarField, VelocityField};
pub use params::{nondimensionalize, ControlMode, CostWeights, NondimParams, PhysicalParams};
