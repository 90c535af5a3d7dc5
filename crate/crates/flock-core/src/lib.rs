//! Velocity-alignment (flocking) particle dynamics with singular power-law
//! communication weights, plus the measure-theoretic tooling needed to study
//! their mean-field behaviour numerically: empirical/atomic measures, grid
//! quantization of initial data, an exact bounded-Lipschitz distance solver,
//! trajectory diagnostics, and convergence/consistency harnesses.
//!
//! The crate is `no_std` (with `alloc`); all IO, configuration and file
//! formats live in the companion CLI crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod flat_metric;
pub mod kernel;
pub mod meanfield;

mod geom;

pub use error::{Error, Result};
