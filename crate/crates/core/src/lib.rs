//! Simulation of three-dimensional Raman sideband cooling of a single atom in a
//! harmonic optical trap.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod angular_momentum;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod hamiltonian;
pub mod integrator;
pub mod protocol;
pub mod scenario;
pub mod trap;
pub mod units;

pub use error::{Error, Result};
