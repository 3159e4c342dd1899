//! Classifier-guided diffusion for object placement.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the CLI and label service use.

pub mod classifier;
pub mod compose;
pub mod datastore;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod ndnet;
pub mod scalar;
pub mod synthworld;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = ndnet::Tensor<f64>;
pub type Graph = ndnet::Graph<f64>;
pub type Mlp = ndnet::Mlp<f64>;
pub type Placement = diffusion::Placement<f64>;
pub type NoiseSchedule = diffusion::NoiseSchedule<f64>;
pub type DiffusionNet = diffusion::DiffusionNet<f64>;
pub type StructClassifier = classifier::StructClassifier<f64>;
pub type RelClassifier = classifier::RelClassifier<f64>;
