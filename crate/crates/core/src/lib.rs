//! Automatic differentiation variational inference.
//!
//! Constrained latent variables are mapped to an unconstrained space
//! ([`transforms`]), a Gaussian approximation is fitted there by stochastic
//! gradient ascent on the evidence lower bound ([`variational`],
//! [`optimizer`]), and the result is checked with [`evaluation`]. Models
//! live in [`models`]; gradients come from [`autodiff`].

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod densities;
pub mod evaluation;
pub mod linalg;
pub mod models;
pub mod optimizer;
pub mod special;
pub mod transforms;
pub mod variational;
