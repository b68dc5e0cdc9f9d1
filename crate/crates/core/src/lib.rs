//! Gaussian phase-space toolkit for sequential continuous-variable
//! teleportation and sequential unsharp entanglement detection.
//!
//! Covariance matrices use the identity-vacuum convention: the vacuum has
//! `σ = I` and a quadrature variance is half the matching diagonal entry.

pub mod entanglement;
pub mod error;
pub mod gaussian;
pub mod measurement;
pub mod rng;
pub mod sampling;
pub mod teleport;

pub use error::{Error, Result};
pub use gaussian::{GaussianState, Quadrature, SymplecticTransform};
pub use sampling::EstimatorResult;
