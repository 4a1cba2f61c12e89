//! Dense matrices and seeded random streams.

mod matrix;
mod real;
mod rng;

pub use matrix::{checksum_all, Matrix};
pub use real::Real;
pub use rng::{sample_uniform, SeededRng, StreamLabel};
