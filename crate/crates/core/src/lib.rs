//! Credit assignment experiments for feed-forward networks: back-propagation,
//! feedback alignment, direct feedback alignment and indirect feedback
//! alignment, with alignment diagnostics, dataset loaders and a training
//! harness.

pub mod credit;
pub mod data;
pub mod diagnose;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod regularize;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Real, SeededRng, StreamLabel};
