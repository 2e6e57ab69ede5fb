//! Numerical laboratory for a normalized parabolic complex Monge-Ampere flow
//! on periodic model domains `[0,1)^{2n}`, `n ∈ {1, 2}`.
//!
//! The crate evolves a potential `phi` under
//!
//! ```text
//! d phi/dt = log( (omega_hat_t + i ddbar phi)^n / Omega ) - phi,   phi(0) = 0,
//! ```
//!
//! where `omega_hat_t = e^{-t} omega_0 + (1 - e^{-t}) omega_inf` interpolates a
//! start metric toward a prescribed nonnegative limit form, and instruments the
//! run with the estimate quantities a proof of convergence tracks: upper bounds
//! on the potential and its rate, barrier inequalities for a singular potential
//! `psi`, trace bounds against the start metric, and the limiting Einstein
//! residual. An independent damped Newton solver for the limit equation
//! provides a cross-check on the flow limit.
//!
//! All field containers are plain owned buffers (`Send + Sync`); operations are
//! pure functions of their inputs. Parallel kernels only ever do pointwise maps
//! into preallocated buffers, and every reduction that can reach an output file
//! runs sequentially, so identical inputs produce byte-identical outputs no
//! matter the thread count.

pub mod background;
pub mod einstein;
pub mod error;
pub mod estimates;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod spectral;
pub mod testfields;

pub use error::{CrfError, Result};
pub use grid::{DiffMode, GridChart};

/// Complex sample type used across all field containers.
pub type Complex64 = rustfft::num_complex::Complex<f64>;
