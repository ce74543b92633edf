//! Exact and asymptotic Clebsch–Gordan coefficients and Wigner–Eckart helpers.

mod asymptotic;
mod cg;
mod exact;
mod half;

pub use asymptotic::{cg_asymptotic, AsymptoticCg};
pub use cg::{cg_exact, cg_f64, cg_symmetry, triangle, wigner_eckart_assemble, CGKey};
pub use exact::{factorial, ExactScalar};
pub use half::HalfInteger;
