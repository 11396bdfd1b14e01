//! Numerical substrate: dense matrices, seeded randomness, a reverse-mode
//! tape for the crate's differentiable objectives, first-order optimizers,
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod optim;
pub mod params;
pub mod rng;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use graph::{cosine_distance, FeatureGroups, Gradients, NodeId, Tape};
pub use matrix::{cholesky, cholesky_solve, Matrix};
pub use optim::OptimizerState;
pub use params::Params;
pub use rng::Rng;
