//! Simulate cyclic quantum error-detection circuits under stochastic Pauli
//! noise and recover the noise from nothing but the measurement stream.
//!
//! The pipeline: build a [`circuit::Circuit`], enumerate its analytic
//! [`nest::Nest`] of error classes, sample a [`sim::MeasurementRecord`],
//! count isolated detection-event clusters ([`extract`]), invert the counts
//! into per-gate rates ([`inversion`]), then check the fitted models against
//! observed logical performance ([`decoder`]) and cross-nest correlations
//! ([`correlation`]).

pub mod circuit;
pub mod correlation;
pub mod decoder;
pub mod error;
pub mod extract;
pub mod inversion;
pub mod nest;
pub mod nnls;
pub mod pauli;
pub mod pipeline;
pub mod propagation;
pub mod record;
pub mod sim;

pub use error::{Error, Result};
