//! Geometric-control toolkit for the wave equation on domains with rough
//! (C¹ or Lipschitz) metrics.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: domains, metrics, the wave symbol `p = -τ² + |ξ|²ₓ`, its
//!   Hamiltonian field and boundary collar charts.
//! - [`boundary`]: pointwise boundary laws (classification, lifts,
//!   reflection, gliding field, escape points).
//! - [`bichar`]: interior flow and assembly of generalized
//!   bicharacteristics with reflection and gliding.
//! - [`gcc`]: geometric control condition checks and `T_GCC` estimation.
//! - [`wave`]: Dirichlet eigenbases, dyadic bands, spectral evolution and
//!   semiclassical observability constants.
//! - [`semiclassical`]: grid quantization of symbols, Schur bounds,
//!   commutator experiments and Euclidean symbol division.
//! - [`measures`]: semiclassical measure estimation and the transport
//!   identity checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bichar;
pub mod boundary;
pub mod config;
pub mod error;
pub mod export;
pub mod expr;
pub mod gcc;
pub mod geometry;
pub mod linalg;
pub mod measures;
pub mod semiclassical;
pub mod wave;

pub use error::{Error, Result};
pub use geometry::{CollarChart, Domain, MetricField, PhasePoint};
pub use num_complex::Complex64;
