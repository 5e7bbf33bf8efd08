//! Numerical toolkit for stochastic homogenization of first-order
//! Hamilton-Jacobi equations with convex Hamiltonians.
//!
//! The crate is organised bottom-up:
//!
//! * [`environment`]: Hamiltonian models and seeded random media.
//! * [`metric`]: fast marching for the metric problem `H(Dm, y) = mu`, plus a
//!   Dijkstra oracle and checks of the metric properties.
//! * [`cell`]: the discounted cell problem `delta v + H(p + Dv, y) = 0`.
//! * [`effective`]: estimates of the effective Hamiltonian by two routes.
//! * [`stats`]: fluctuation, bias and rate experiments.
//! * [`hj_time`]: time-dependent solver and homogenization error.
//! * [`almost_periodic`]: modulus of almost periodicity and explicit rates.
//! * [`seeds`] and [`output`]: reproducible seeding and CSV formatting.

pub mod almost_periodic;
pub mod cell;
pub mod effective;
pub mod environment;
pub mod error;
pub mod grid;
pub mod hj_time;
pub mod metric;
pub mod output;
pub mod seeds;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, Vec2};
