//! Column schemas and the sidecar file declaring them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Explicit category list, in encoding order. When absent, categories are
    /// taken from the training split in first-appearance order at fit time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

/// The schema sidecar: which CSV columns are features of which kind, and
/// which column carries the label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaSidecar {
    pub label: String,
    pub columns: Vec<ColumnSchema>,
}

impl SchemaSidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let sidecar: SchemaSidecar = serde_json::from_str(&text)?;
        sidecar.validate()?;
        Ok(sidecar)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Data("sidecar declares no feature columns".into()));
        }
        if self.columns.iter().any(|c| c.name == self.label) {
            return Err(Error::Data(format!(
                "label column {:?} also listed as a feature",
                self.label
            )));
        }
        let mut names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.columns.len() {
            return Err(Error::Data("duplicate column names in sidecar".into()));
        }
        Ok(())
    }
}
