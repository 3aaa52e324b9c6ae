//! Numerical laboratory for a periodically forced heteroclinic network on the
//! two-sphere.
//!
//! Two levels are implemented side by side: direct simulation of the forced
//! vector field in `R^3 x S^1` ([`system`], [`integrator`], [`section`]) and the
//! closed-form annulus return map built from local and transition maps
//! ([`model`]), on which rotational horseshoes are certified ([`horseshoe`]).
//! [`experiments`] drives sweeps, route reconstructions and figure output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod fuzzing;
pub mod horseshoe;
pub mod integrator;
pub mod model;
pub mod real;
pub mod section;
pub mod stats;
pub mod system;

pub use error::{Error, ErrorClass, Result};
pub use system::{ForcingProfile, State4, SystemParams};
