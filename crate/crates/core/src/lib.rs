//! Consistency theory for jump-diffusion term-structure models.

pub mod config;
pub mod consistency;
pub mod curve;
pub mod error;
pub mod model;
pub mod nelson_siegel;
pub mod output;
pub mod presets;
pub mod quadrature;
pub mod separable;
pub mod simulate;

pub use error::{Error, Result};
