//! Outcome-augmented contextual bandits: softmax outcome models, Gaussian
//! mixture beliefs updated by Laplace approximation, robust fusion of
//! possibly faulty external labels, expected-free-energy option selection
//! and a Monte-Carlo experiment harness.

pub mod efe;
pub mod env;
pub mod error;
pub mod experiments;
pub mod gaussmix;
pub mod inference;
pub mod laplace;
pub mod model;
pub mod par;
pub mod policies;

pub use error::{Error, Result};
