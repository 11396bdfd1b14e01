//! Named parameter storage shared by the tape, the optimizers, and the
//! checkpoint format.

use serde::{Deserialize, Serialize};

use crate::numerics::matrix::Matrix;

/// An ordered set of named parameter tensors. Indices are stable from the
/// moment a parameter is added, which is what gradients and optimizer slots
/// key on.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn value(&self, index: usize) -> &Matrix {
        &self.values[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.values[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.rows() * m.cols()).sum()
    }
}
