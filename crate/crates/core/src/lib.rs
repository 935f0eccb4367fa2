//! Simulation and analysis of open stochastic chemical reaction networks.
//!
//! - [`model`]: species, reactions, I/O fluxes and the JSON document format.
//! - [`ssa`]: exact count-level simulation and replicate ensembles.
//! - [`energy`]: energy-resolved particle simulation and effective rates.
//! - [`meanfield`]: the deterministic limit as ODEs and delay equations.
//! - [`thermo`]: chemical potentials, free energy and entropies.
//! - [`fixedpoint`]: stationary points, stability and recurrence.
//! - [`compartments`]: networks of compartments with delayed transport.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compartments;
pub mod energy;
pub mod fixedpoint;
pub mod meanfield;
pub mod model;
pub mod output;
pub mod rng;
pub mod ssa;
pub mod stats;
pub mod thermo;
