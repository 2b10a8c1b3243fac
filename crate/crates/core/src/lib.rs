//! Hyperspectral unmixing.
//!
//! Physics-based forward models ([`mixmodels`]), simplex-constrained
//! inversions ([`solvers`], [`kernel`]), plug-and-play ADMM with pluggable
//! denoisers ([`pnp`]), a trainable unrolled ADMM network ([`unroll`]) and
//! the losses used to score them ([`metrics`]).
//!
//! Matrices hold one spectrum per column: a cube is `bands × pixels`,
//! endmembers are `bands × R` and abundances are `R × pixels`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kernel;
pub mod metrics;
pub mod mixmodels;
pub mod pnp;
pub mod qp;
pub mod rng;
pub mod simplex;
pub mod solvers;
pub mod types;
pub mod unroll;

pub use error::{Result, UnmixError};
pub use simplex::project_to_simplex;
pub use types::{
    AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport, SpectralDomain, Validate,
    Violation, ASC_TOLERANCE,
};
