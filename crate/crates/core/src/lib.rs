//! Sequential, anytime-valid tests and lower confidence bounds for the mean
//! of a bounded stratified population.
//!
//! Stratum-wise betting test supermartingales are multiplied into one I-TSM
//! per intersection null, and the union-of-intersections test sequence is the
//! smallest running maximum over the feasible nulls. [`methods::run`] drives
//! any strategy against a [`population::DrawSource`].

pub mod audit;
pub mod bets;
pub mod engine;
pub mod error;
pub mod geometry;
#[cfg(feature = "harness")]
pub mod harness;
pub mod methods;
pub mod oracle;
pub mod population;
pub mod selection;

pub use error::{Error, Result};
