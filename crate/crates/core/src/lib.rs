//! Bayesian inference for a birth-death model of cell death observed through
//! exact death times, census counts, or noisy proportions of dead cells.
//!
//! The crate covers the closed-form extinction distribution and an exact
//! simulator ([`model`]), the three observation regimes ([`observation`]),
//! random-walk Metropolis-Hastings with exact, simulator-based and
//! emulator-based likelihoods ([`mcmc`], [`posterior`]), Latin hypercube
//! training designs ([`design`]), dense and compactly supported Gaussian
//! process emulators ([`gp`]), and out-of-sample emulator checks
//! ([`diagnostics`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN.

pub mod cost;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod mcmc;
pub mod model;
pub mod observation;
pub mod posterior;
mod parallel;
pub mod rng;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};
pub use model::BirthDeathParams;
