//! Differentially private approximation of the minimum enclosing ball.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: points, balls, linear coverage scans and an exact MEB oracle.
//! - [`privacy`]: zCDP calibration, conversions, the budget ledger and seeded noise streams.
//! - [`meb`]: the non-private margin-based solver, its radius search and the noisy-mean variant.
//! - [`dp`]: the curator-model private solver and driver.
//! - [`ldp`]: the local-model protocol, simulated in process.
//! - [`init`]: private initialisation of a starting center and radius.
//! - [`harness`]: data generators, CSV ingestion, experiment runner and subsample-and-aggregate.

pub mod dp;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod init;
pub mod ldp;
pub mod meb;
pub mod privacy;
pub mod trace;

pub use error::{Error, Result};
pub use geometry::{Ball, Dataset, Point};
