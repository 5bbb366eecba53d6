//! Valuation engine for aggregate Markov multi-state life insurance models.
//!
//! A policyholder's observable state (active, disabled, dead, ...) is the
//! macrostate of a Markov jump process whose full state space attaches
//! unobservable microstates to each macrostate. Sojourn times then follow
//! inhomogeneous phase-type distributions, which buys duration effects —
//! recovery rates that fall with time disabled, say — while keeping every
//! quantity computable by matrix product integrals.
//!
//! The crate covers, module by module:
//!
//! - [`prodint`]: product integrals / transition matrices via fourth-order sweeps
//! - [`iph`]: inhomogeneous phase-type survival, density, and overshoot
//! - [`model`]: block intensity models, validation, reset structure
//! - [`mpp`]: the observed jump process — conditional sojourn and mark laws,
//!   compensators
//! - [`occprob`]: conditional occupation probabilities jointly with duration
//! - [`cashflow`]: expected cash flows and prospective reserves
//! - [`phb`]: policyholder behaviour (free policy / surrender) transforms
//! - [`sim`]: Monte Carlo simulation, the independent verification oracle
//! - [`cli`]: the `run` / `verify` entry points behind the `aggmark` binary
//!
//! Indices are 0-based everywhere, including file formats: the initial
//! macrostate is state 0.

pub mod cashflow;
pub mod cli;
pub mod config;
pub mod error;
pub mod func;
pub mod grid;
pub mod iph;
pub mod model;
pub mod mpp;
pub mod occprob;
pub mod phb;
pub mod prodint;
pub mod sim;

pub use error::{Error, Result};
pub use func::RateFn;
pub use grid::TimeGrid;
pub use model::{AggregateModel, MicroIndex, ResetStructure};
pub use prodint::MatrixFn;
