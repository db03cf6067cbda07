//! Structure-preserving gradient-flow solver for coupled entropy / phase-field
//! models on cell-centered grids with reflecting boundaries.
//!
//! Each step minimizes the incremental functional
//! `Phi(u) + ||u - u_prev||^2 / (2 tau)` in the `V0' x H` metric by block
//! alternation between the entropy `s` and the phase field `chi`.
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod grid;
pub mod harness;
mod linalg;
pub mod metric;
pub mod models;
pub mod par;
pub mod rng;
pub mod stepper;
