//! Reduced-state dynamics of quasi-isolated finite quantum systems.
//!
//! A subsystem whose Hamiltonian commutes with the total Hamiltonian keeps
//! its energy-basis populations fixed, while every coherence is multiplied
//! by a decoherence factor: the Fourier transform of the distribution of
//! environment-induced frequency shifts. This crate evaluates those factors,
//! assembles reduced density matrices and observable averages from them,
//! checks them against brute-force evolution of the composite system, and
//! provides the information, thermalization and recurrence analyses built
//! on top.
//!
//! Modules, bottom-up:
//!
//! - [`spectrum`]: subsystem energies, observables, initial reduced states.
//! - [`environment`]: discrete bath tables, spectral densities, density of
//!   states from radial dispersions.
//! - [`kernels`]: decoherence factors (closed forms, mixtures, quadrature).
//! - [`dynamics`]: reduced matrices, trajectories, equilibrium values,
//!   equilibration times, recurrence scans.
//! - [`oracle`]: exact composite evolution and partial traces.
//! - [`information`]: average information and the Gibbs-Klein check.
//! - [`thermalization`]: window states and eigenstate thermalization.
//! - [`cli`]: configuration parsing and run modes behind the `qisim` binary.

pub mod cli;
pub mod dynamics;
pub mod environment;
mod error;
mod fmt;
pub mod information;
pub mod kernels;
pub mod linalg;
pub mod oracle;
pub mod spectrum;
pub mod thermalization;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Dense complex matrix used throughout.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;
