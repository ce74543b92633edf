//! Symmetry-resolved exact diagonalization of SU(2)-invariant spin-1/2 chains, with
//! Wigner–Eckart reduced matrix elements, non-Abelian thermal averages and
//! infinite-time averages.

pub mod error;
pub mod spin_algebra;

pub use error::{Error, Result};
pub mod basis;
pub mod ensembles;
pub mod harness;
pub mod model;
pub mod report;
pub mod sparse;
pub mod spectral;
pub mod stats;
pub mod tensor;
