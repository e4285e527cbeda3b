//! Data-driven safety certificates for stochastic systems.
//!
//! From sampled transitions `(x, x⁺)` the pipeline fits a kernel conditional
//! mean embedding, expands the barrier in a truncated Fourier basis on a
//! torus, tightens the barrier conditions from a finite lattice to the
//! continuum, and solves one linear program. A feasible program yields a
//! barrier `B` with levels `η` and `c`, and the probability of avoiding the
//! unsafe set over `T` steps is at least `1 − (η + cT)`.
//!
//! The stages live in [`data`], [`estimator`], [`tuner`], [`spectral`],
//! [`geometry`], [`relaxation`] and [`solve`]; [`certify::synthesize`] runs
//! them in order, and [`interface`] wraps that in a CLI and an HTTP service.

pub mod certify;
pub mod data;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod interface;
pub mod relaxation;
pub mod solve;
pub mod spectral;
pub mod tuner;

pub use error::{Error, Result};
