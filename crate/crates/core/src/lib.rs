//! Brownian occupation measures on ℝᵈ and the flat torus, Brownian
//! interlacements restricted to compact sets, and optimal transport costs
//! between atomic measures.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem, the command line or thread pools lives in the companion
//! `brownot` crate.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`geometry`] | points, flat torus metric, balls/cubes, atomic measures |
//! | [`brownian`] | path sampling, hitting and exit events, occupation atoms |
//! | [`potential`] | Green constant, capacities, sweeping, torus hitting laws |
//! | [`interlacement`] | restricted interlacement occupation measures |
//! | [`transport`] | exact / brute-force / entropic solvers, Fourier bounds |
//! | [`stats`] | Monte Carlo summaries and goodness-of-fit tests |

#![no_std]
// `!(x > 0.0)` is how NaN gets rejected alongside the range check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod brownian;
pub mod error;
pub mod geometry;
pub mod interlacement;
pub mod potential;
pub mod rng;
pub mod special;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{Domain, Point, Shape, Space, TorusPoint, WeightedAtoms};
pub use rng::SeedSpec;
