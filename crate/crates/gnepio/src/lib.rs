//! File formats, the HiGHS LP backend, the experiment harness and the
//! command line for the `gnepio-core` solvers.

pub mod cli;
pub mod experiment;
pub mod formats;
pub mod highs_backend;

pub use gnepio_core as core;
