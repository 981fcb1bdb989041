//! Numerical laboratory for Schrödinger operators with mollified noise
//! potentials on boxes.
//!
//! The pipeline: sample a stationary random field on a torus lattice,
//! mollify it, compute the renormalization constant and the exponential
//! change of variables that tames the singular potential, assemble
//! finite-difference forms with Dirichlet or Neumann boundary conditions,
//! and estimate spectra, eigenvalue counting functions, the integrated
//! density of states, Weyl asymptotics, and spectral-tail exponents.

pub mod eigensolve;
pub mod field;
pub mod harmonic;
pub mod ids;
pub mod operator;
pub mod renorm;
pub mod sparse;
pub mod spectral;
pub mod stats;
