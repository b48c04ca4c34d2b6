//! Block-by-block training of random Fourier neural networks.
//!
//! A random Fourier neural network is a residual stack of blocks, each a sum
//! of `W` sinusoids. Frequencies are sampled by Metropolis chains whose
//! acceptance ratio compares amplitude magnitudes; amplitudes come from a
//! Tikhonov-regularized least-squares solve. See [`trainer::train`] for the
//! entry point.

// NaN-rejecting range checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baseline;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
