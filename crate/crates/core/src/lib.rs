//! Robust adaptive MPC with learned Lipschitz uncertainty envelopes.
//!
//! Measurements of an unknown Lipschitz term `d(x)` in
//! `x⁺ = Ax + Bu + d(x)` bound it pointwise by an intersection of balls
//! ([`envelope`]). An s-procedure SDP turns these bounds into ellipsoids and
//! boxes over whole state regions ([`setsynth`]), which feed a robust MPC
//! with affine disturbance feedback ([`mpc`]). [`sim`] runs offline
//! exploration and the online loop; [`cli`] wraps both for the command line.

use openblas_src as _;

pub mod cli;
pub mod config;
pub mod envelope;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mpc;
pub mod setsynth;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
