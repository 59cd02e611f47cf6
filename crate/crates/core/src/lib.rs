//! Symmetric periodic solutions of the restricted hip-hop `(2N+1)`-body problem.
//!
//! `2N` equal-mass primaries move on an antiprism ("hip-hop") orbit while a
//! massless body oscillates on the symmetry axis. Solutions are found by
//! shooting on the half-period conditions `r'(T) = d(T) = z(T) = 0`, which by
//! time-reversal symmetry make all three of `r`, `d` and `z` `2T`-periodic.
//!
//! Modules, bottom up:
//! - [`model`]: parameters, constants, forces, energy, body positions
//! - [`integrator`]: adaptive DOP853 with dense output and event location
//! - [`flow`]: shooting maps, residuals, periodicity verification
//! - [`period`]: the circular-ring period function of the massless body
//! - [`solver`]: damped Newton, bracketed scalar roots, the staged solve
//! - [`continuation`]: families in `b` and choreography classification
//! - [`export`]: CSV/JSON artifacts

pub mod continuation;
pub mod export;
pub mod flow;
pub mod integrator;
pub mod model;
pub mod parallel;
pub mod period;
pub mod quadrature;
pub mod solver;

pub use model::{DerivedConstants, ProblemParams, ReducedState};
