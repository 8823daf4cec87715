//! Weights directory: one DSD1 file per tensor plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::tensor::nn::Parameters;
use crate::tensor::{read_tensor, write_tensor};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
}

fn file_name(path: &str) -> String {
    format!("{path}.dsd")
}

pub fn save_weights(dir: impl AsRef<Path>, weights: &ModelWeights) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut failure = None;
    weights.visit("", &mut |path, t| {
        if failure.is_some() {
            return;
        }
        let file = file_name(path);
        if let Err(e) = write_tensor(dir.join(&file), t) {
            failure = Some(e);
            return;
        }
        tensors.push(ManifestEntry {
            path: path.to_string(),
            shape: t.shape().to_vec(),
            file,
        });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let json = serde_json::to_string_pretty(&Manifest { tensors })?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

/// Loads a weights directory, checking every tensor against the layout
/// implied by `config`.
pub fn load_weights(dir: impl AsRef<Path>, config: &ModelConfig) -> Result<ModelWeights> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut entries: BTreeMap<String, ManifestEntry> = BTreeMap::new();
    for e in manifest.tensors {
        if entries.contains_key(&e.path) {
            return Err(Error::Validation {
                path: e.path,
                reason: "listed twice in manifest".into(),
            });
        }
        entries.insert(e.path.clone(), e);
    }

    let mut weights = ModelWeights::init(config, 0)?;
    let mut failure = None;
    weights.visit_mut("", &mut |path, slot| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = entries.remove(path) else {
            failure = Some(Error::Validation {
                path: path.to_string(),
                reason: "missing from manifest".into(),
            });
            return;
        };
        if entry.shape != slot.shape() {
            failure = Some(Error::Validation {
                path: path.to_string(),
                reason: format!(
                    "manifest shape {:?}, expected {:?}",
                    entry.shape,
                    slot.shape()
                ),
            });
            return;
        }
        match read_tensor(dir.join(&entry.file)) {
            Ok(t) if t.shape() == slot.shape() => *slot = t,
            Ok(t) => {
                failure = Some(Error::Validation {
                    path: path.to_string(),
                    reason: format!("file shape {:?}, expected {:?}", t.shape(), slot.shape()),
                })
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(path) = entries.into_keys().next() {
        return Err(Error::Validation {
            path,
            reason: "not part of this configuration".into(),
        });
    }
    Ok(weights)
}
