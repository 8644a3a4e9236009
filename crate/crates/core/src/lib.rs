//! Simulation and verification of SGD noise dynamics along exponential
//! symmetries of the loss.
//!
//! The numerical core is generic over [`scalar::Float`]; the `f64` aliases
//! below are what the harness and the test suite use.

pub mod data;
pub mod equilibria;
pub mod error;
pub mod models;
pub mod noise;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod symmetry;

pub use error::{Error, Result};
pub use scalar::Float;

pub type Params = params::ParamBlocks<f64>;
pub type Data = data::Dataset<f64>;
pub type Gradients = noise::GradientSet<f64>;
pub type Noise = noise::NoiseStats<f64>;
pub type Symmetry = symmetry::SymmetryDescriptor<f64>;
