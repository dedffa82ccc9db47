//! Joint multiphase segmentation, bias correction and denoising.

pub mod config;
pub mod error;
pub mod field;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use field::ScalarField;
