//! Simulation and analysis of pinched hysteresis in nonlinear RLC resonators.
//!
//! A series or parallel RLC resonator with a diode-type switching element,
//! driven by `A + B sin(w t)`, traces a pinched loop in the excitation/current
//! plane. This crate integrates the resonator models, extracts the
//! steady-state loop, and measures pinch points, lobe areas and harmonic
//! content. The `gates` module reuses extracted loops as lookup devices in
//! two-input logic gates driving a capacitive load.

pub mod analysis;
pub mod circuits;
pub mod cli;
pub mod error;
pub mod gates;
pub mod integrator;
pub mod nonlinearity;

pub use error::{Error, Result};
