//! Polynomial chaos propagators for stochastically forced incompressible flow.
//!
//! The crate expands the solution of a noise-driven 2-D Navier-Stokes (or 1-D
//! Burgers) equation over a Cameron-Martin basis of Hermite functionals and
//! advances the expansion coefficients with pseudo-spectral steppers on the
//! periodic torus. It provides:
//!
//! - sparse multiindices and the combinatorial weights of the chaos algebra
//!   ([`multiindex`]),
//! - Wick/ordinary products, Malliavin derivatives and Skorokhod integrals on
//!   truncated expansions ([`chaos`]),
//! - time-noise product bases (trigonometric and Haar) with quadrature,
//!   stochastic exponents and test actions ([`basis`]),
//! - Catalan-number growth bounds, weighted norms and dilation rescalings
//!   ([`scaling`]),
//! - FFT-based fields, Leray projection and IMEX steppers ([`spectral`]),
//! - the lower-triangular and fully coupled coefficient propagators
//!   ([`propagator`]),
//! - moment extraction and Monte Carlo cross-validation ([`stats`]).
//!
//! Heavy loops (coefficient sweeps within a degree level, Monte Carlo paths)
//! run on rayon when the default `parallel` feature is enabled and fall back
//! to plain iterators otherwise; [`exec::ExecMode::Serial`] forces the
//! sequential path at runtime. Both paths produce bit-identical results
//! because every parallel task owns its output slot and reductions happen in
//! a fixed order.

pub mod basis;
pub mod chaos;
pub mod error;
pub mod exec;
pub mod io;
pub mod multiindex;
pub mod propagator;
pub mod scaling;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
