//! Finite-volume laboratory for a two-species chemotaxis system with
//! Lotka-Volterra competition, a consumed/produced signal, and a Stokes
//! fluid forced by buoyancy, on a 2D/3D box.
//!
//! The crate is organised bottom-up:
//!
//! * [`params`] - model parameters, steady states, and the algebraic
//!   feasibility checks that decide whether a parameter set carries a
//!   convergence guarantee (and with which Lyapunov weights).
//! * [`grid`] - uniform cell-centered grids with ghost layers, scalar and
//!   staggered (face-centered) vector fields, integrals and norms.
//! * [`operators`] - the discrete operators: Laplacian, face gradients,
//!   donor-cell advection and chemotactic flux, divergence, and an exact
//!   Neumann Poisson solver.
//! * [`stokes`] - buoyancy forcing and the projection step for the fluid.
//! * [`stepper`] - time integration: stable step sizes, the operator-split
//!   update, full runs with diagnostics, and manufactured-solution studies.
//! * [`diagnostics`] - Lyapunov functionals, distances to equilibrium, and
//!   the dissipation audit.
//! * [`config`] / [`cli`] - TOML run configuration and the `kslab` binary.

pub mod cli;
pub mod config;
mod dct;
pub mod diagnostics;
mod error;
pub mod grid;
pub mod operators;
pub mod params;
pub mod snapshot;
pub mod stepper;
pub mod stokes;

pub use error::{Error, Result};
