//! Inversions with an explicit linear forward model: per-pixel FCLS,
//! blind regularized NMF and the VCA initializer.

mod fcls;
mod nmf;
mod vca;

pub use fcls::{fcls_batch, fcls_solve, FclsOptions, FclsSolver};
pub use nmf::{min_volume, nmf_objective, nmf_unmix, NmfOptions, NmfOutput};
pub use vca::vca_init;
