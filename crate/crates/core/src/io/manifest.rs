//! JSON dataset manifest and class-name sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Ties a FEX1 bundle to its CHD1 head, class names and a per-image split.
/// Relative paths resolve against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub bundle: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<PathBuf>,
    pub class_names: Vec<String>,
    pub splits: Vec<Split>,
}

impl DatasetManifest {
    pub fn validate(&self, bundle: &FeatureBundle) -> Result<()> {
        if self.class_names.len() != bundle.n_classes {
            return Err(Error::Invariant(format!(
                "manifest lists {} class names for {} classes",
                self.class_names.len(),
                bundle.n_classes
            )));
        }
        if self.splits.len() != bundle.len() {
            return Err(Error::Invariant(format!(
                "manifest has {} split tags for {} images",
                self.splits.len(),
                bundle.len()
            )));
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut manifest: Self = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            manifest.bundle = dir.join(&manifest.bundle);
            manifest.head = manifest.head.map(|h| dir.join(h));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
