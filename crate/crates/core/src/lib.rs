//! Pricing of American call options whose cap switches level at an
//! intermediate date, under geometric Brownian motion.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: parameters, caps, grids, boundaries and the structural case split.
//! * [`analytic`]: normal law, European prices, first-hitting expectations and
//!   the killed-diffusion density, expected local time.
//! * [`uncapped`]: the classical American call boundary and its premium formula.
//! * [`singlecap`]: constant-cap machinery (exercise at the minimum of the
//!   uncapped boundary and the cap, hitting-time and local-time prices).
//! * [`twolevel`]: waiting values, the structural times and the recursive
//!   integral equations for the exercise boundary before the switch date.
//! * [`oracle`]: trinomial lattice and Monte Carlo validators.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

// `!(x > y)` is used on purpose so that NaN inputs take the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod model;
pub mod oracle;
pub mod par;
pub mod quad;
pub mod singlecap;
pub mod table;
pub mod twolevel;
pub mod uncapped;

pub use error::{Error, Result};
pub use model::{
    Boundary, CapContinuity, CaseLabel, Level, MarketParams, SolveReport, TimeGrid, TwoLevelCap,
};
pub use par::Exec;
pub use singlecap::SingleCapSolution;
pub use twolevel::{SolverConfig, TwoLevelSolution};
pub use uncapped::UncappedSolution;
