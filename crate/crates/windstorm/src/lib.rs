//! File formats, configuration, parallel pipeline stages and the command
//! line for fitting and simulating Lagrangian windstorm models. The
//! algorithms live in `windstorm-core`.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod store;

pub use error::{Error, Result};
