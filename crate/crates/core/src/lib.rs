//! Algorithms for Lagrangian windstorm modelling.
//!
//! The crate is `no_std` (with `alloc`) and contains no IO: marginal
//! extreme-value models, footprint extraction from gridded relative wind
//! fields, kernel-density Markov models for footprint evolution, anisotropic
//! Gaussian-process wind fields and the Eulerian diagnostics computed from
//! simulated catalogs. File formats, configuration and the command line live
//! in the `windstorm` crate.
#![no_std]
// `num_traits::Float` supplies float math when std is absent from the crate
// graph; dev-dependencies pull std in and make those imports redundant.
#![allow(unused_imports)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod extract;
pub mod grid;
pub mod kde;
pub mod margins;
pub mod model;
pub mod rng;
pub mod special;
pub mod storm_model;
pub mod synth;
pub mod track;
pub mod windfield;

pub use error::{Error, Result};
pub use grid::{CellMask, GriddedFieldStack, Grid, ScaleTag};
pub use model::{FitConfig, FittedStormModel};
pub use track::{StormTrack, TrackPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
