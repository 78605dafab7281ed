//! Numerical laboratory for stochastic differential equations with
//! almost-periodic coefficients.
//!
//! Coefficients are quasi-periodic trigonometric sums ([`apfun`]). Solution
//! laws are simulated by Euler–Maruyama ensembles ([`sde`]) or, for linear
//! models, propagated exactly through their moment equations ([`momentflow`]).
//! Laws are compared with the bounded-Lipschitz metric ([`measures`]), which
//! drives the almost-periodicity detectors in [`aptest`] and the separation
//! checkers in [`separation`]. [`experiment`] wires these into reproducible
//! end-to-end runs.

pub mod apfun;
pub mod aptest;
pub mod experiment;
pub mod measures;
pub mod momentflow;
pub mod report;
pub mod sde;
pub mod separation;
