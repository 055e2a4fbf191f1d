//! A pseudo-spectral laboratory for the SQG front equation
//!
//! ```text
//! (d_t - 2 log|D_x| d_x) phi = Q(phi, phi_x),
//! Q(f, g)(x) = int F(d^y f) |d|^y g dy,   F(s) = 1 - 1/sqrt(1 + s^2),
//! ```
//!
//! where `d^y` and `|d|^y` are the difference quotients `(f(x+y) - f(x))/y`
//! and `(f(x+y) - f(x))/|y|`. The crate evaluates the structural machinery of
//! the equation numerically at desk scale: the resonance identity of the
//! bilinear symbol, paradifferential decompositions and normal forms, modified
//! energies, dispersive decay diagnostics, and wave-packet profile extraction
//! with its asymptotic ODE and modified-scattering fit.
//!
//! Modules:
//! * [`spectral`] - periodic grid, FFT analysis, multipliers, dyadic blocks;
//! * [`nonlocal`] - singular-kernel quadrature for Q and Omega, symbol checks;
//! * [`paradiff`] - M-dependent paraproducts, trichotomy, normal forms;
//! * [`diagnostics`] - control norms, the vector field L, modified energies;
//! * [`evolution`] - integrating-factor RK4 time stepping with dealiasing;
//! * [`packet`] - wave packets, asymptotic profiles, scattering fits;
//! * [`runner`] - experiment presets, config parsing, CSV/summary output.

pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod nonlocal;
pub mod packet;
pub mod paradiff;
pub mod runner;
pub mod spectral;

pub use error::{LabError, Result};
