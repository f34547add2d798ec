//! Semiclassical quantum dynamics with Coulomb-singular potentials, Wigner
//! phase-space diagnostics and the limiting classical transport.

pub mod fft;
pub mod grid;
pub mod potential;
pub mod quantum;
pub mod probe;
pub mod wigner;
pub mod classical;
pub mod quadrature;
pub mod estimates;
pub mod fit;
pub mod config;
pub mod convergence;
pub mod export;

/// Library version recorded in results and manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
