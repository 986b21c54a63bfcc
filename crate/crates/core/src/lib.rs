//! Gaussian mixture models whose component means are constrained to a
//! pre-selected linear subspace.
//!
//! The crate covers the whole workflow: kernel-density mode finding over a
//! bandwidth ladder ([`modes`]), subspace construction by weighted PCA over
//! modes and class means ([`subspace`]), the constrained generalized-EM
//! estimator ([`cgmm`]), a reduced-rank mixture discriminant analysis baseline
//! ([`mda_rr`]), error metrics ([`evaluate`]) and experiment orchestration
//! ([`pipeline`]).

pub mod cgmm;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod mda_rr;
pub mod mixture;
pub mod modes;
pub mod pipeline;
pub mod serde_util;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
