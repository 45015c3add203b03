//! Simulation and analysis toolkit for cryogenic surface-electrode ion traps.
//!
//! The crate follows the chain of a heating-rate experiment:
//!
//! * [`geometry`]: planar electrode layouts and the five-rod trap generator.
//! * [`electrostatics`]: analytic unit-voltage potentials of polygonal patches
//!   in a grounded plane.
//! * [`pseudopotential`]: RF null, total-potential minimum, secular
//!   frequencies, principal axes, depth.
//! * [`cooling`]: Fock-space sideband cooling and heating of one motional mode.
//! * [`thermometry`]: sideband scans, Gaussian fits, ratio thermometry and
//!   heating-rate regression.
//! * [`noise`]: heating rate to field-noise conversion, scaling-law fits and
//!   the technical noise budget.
//! * [`pipeline`]: config-driven end-to-end runs with an artifact manifest.

// `!(x > 0.0)` doubles as a NaN check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod cooling;
pub mod electrostatics;
mod error;
pub mod geometry;
pub mod io;
pub mod noise;
pub mod pipeline;
pub mod pseudopotential;
pub mod stats;
pub mod thermometry;

pub use error::{Error, Result};
