//! Tabular data distillation, end to end: heterogeneous-table homogenization,
//! column-embedding autoencoder representation learning, five distillation
//! methods operating in the original binary or learned latent space,
//! downstream classifiers, and a relative-regret benchmark harness.

pub mod data;
pub mod error;
pub mod numerics;

pub use error::{Error, Result};
