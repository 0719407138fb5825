//! Multi-asset RFQ market making with size-dependent quotes.
//!
//! The value function of the market maker lives on a low-dimensional factor
//! space obtained from the eigenstructure of the asset covariance. It is
//! computed once by [`solver::solve`], turned into quotes by
//! [`quotes`], corrected for the risk the factors miss by [`residual`], and
//! evaluated out of sample by [`simulator::simulate`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod factor;
pub mod grid;
pub mod hamiltonian;
pub mod linalg;
pub mod model;
pub mod quotes;
pub mod residual;
pub mod rng;
pub mod simulator;
pub mod solver;
pub mod stats;
pub mod surface_io;

pub use error::{Error, Result};
