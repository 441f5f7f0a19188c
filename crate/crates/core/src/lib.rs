//! Random spectral submanifolds for randomly forced nonlinear mechanical systems.
//!
//! The pipeline: build a [`model::MechanicalSystem`], convert it to first-order
//! form, pick a slow spectral subspace, expand the autonomous SSM to order `N`,
//! attach the projected random forcing, and compare full and reduced
//! Monte-Carlo power spectral densities.

pub mod error;
pub mod forcing;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod poly;
pub mod psd;
pub mod scalar;
pub mod spectral;
pub mod reduced;
pub mod ssm;
pub mod taylor;
pub mod library;

pub use error::{Error, Result};
