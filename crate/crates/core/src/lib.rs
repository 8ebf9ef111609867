//! Forward and inverse solvers for generalized Nash equilibria of
//! multi-player network flow games with quadratic congestion costs and a
//! shared arc capacity.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the HiGHS backend
//! and the command line live in the companion `gnepio` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod equilibrium;
pub mod game;
pub mod inverse;
pub mod lp;
pub mod network;
