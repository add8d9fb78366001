//! Experiment harness for the `tristage` selectors: the simulation grid and its
//! record store, aggregation into plot-ready CSV, the bootstrap study on real
//! data, the invariant suite and the `tristage` command-line interface.

pub mod aggregate;
pub mod bootstrap;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod selftest;

pub use error::{BenchError, Result};
