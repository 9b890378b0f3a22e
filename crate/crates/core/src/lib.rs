//! Normalizing flows over mixed unbounded and circular coordinates.
//!
//! A [`FlowModel`] pushes samples of a simple [`BaseDist`] through an ordered
//! list of invertible [`Layer`]s. Densities follow from the change-of-variables
//! formula, and every quantity is computed on a define-by-run [`Tape`] so
//! that losses can be differentiated with respect to all model parameters.
//!
//! Direction convention used throughout: *forward* maps base space to data
//! space, *inverse* maps data space to base space. `log_prob` runs inverses.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration
//! and the command line live in the companion `flowkit` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dists;
pub mod error;
pub mod flows;
pub mod math;
pub mod nets;
pub mod numcore;
pub mod targets;
pub mod train;

pub use dists::{BaseDist, CoordKind};
pub use error::{Error, Result};
pub use flows::{Direction, FlowModel, Layer};
pub use numcore::{Gradients, Matrix, ParamId, ParamStore, Rng, Stream, Tape, Var};
pub use targets::TargetDensity;
