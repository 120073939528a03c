//! Long-run-average impulse control of one-dimensional diffusions, with
//! mean field game and mean field type control layers on top.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod expr;
pub mod hitting;
pub mod impulse;
pub mod meanfield;
pub mod numerics;
pub mod report;
pub mod simulation;
pub mod stationary;

pub use config::NumericsConfig;
pub use error::{Error, Result};
