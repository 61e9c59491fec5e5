//! Riemannian variational autoencoders for learning weighted submanifolds.

pub mod analytic1d;
pub mod baselines;
pub mod error;
pub mod geometry;
pub mod model;
pub mod neuralnet;
pub mod rgauss;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{ManifoldKind, ManifoldPoint, TangentVector};
