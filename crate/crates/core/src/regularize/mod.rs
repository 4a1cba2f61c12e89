//! Dropout and fast-sign adversarial examples.

mod adversarial;
mod dropout;

pub use adversarial::{fast_sign_adversarial, DEFAULT_ADV_EPSILON};
pub use dropout::{apply_dropout, DropoutMode, DropoutSpec, Dropped};
