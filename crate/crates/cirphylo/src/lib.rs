//! Phylogenetic substitution models whose site-specific substitution rate
//! evolves along the tree as a mean-reverting square-root (CIR) diffusion.
//!
//! The crate provides the rate-process layer (transition and stationary laws,
//! dispersion statistics, parameter estimation from count dispersion), moment
//! generating functions of the integrated rate (start-conditioned and
//! endpoint-conditioned closed forms plus finite-state switching analogues),
//! substitution matrices averaged over the rate law, exact likelihoods for
//! three-taxa star trees, Monte Carlo likelihoods for general trees, and
//! event-level simulators that serve as independent oracles for all of it.

#![forbid(unsafe_code)]

pub mod cir;
pub mod error;
pub mod mgf;
pub mod phylo;
pub mod quadrature;
pub mod sim;
pub mod special;
pub mod subst;

pub use cir::{empirical_dispersion, CirParams, DispersionEstimate};
pub use error::{Error, Result};
pub use mgf::{eta_max, mgf_bridge, mgf_start, psi, xi, CovarionSpec};
pub use subst::{Eigensystem, ModelFamily, RateMatrix};
