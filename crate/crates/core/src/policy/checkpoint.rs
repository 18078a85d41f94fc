use super::{PolicyError, PolicyModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Policy parameters tagged with the corpus they were trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub corpus_hash: String,
    pub step: usize,
    pub model: PolicyModel,
}

fn err(path: &Path, message: impl Into<String>) -> PolicyError {
    PolicyError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PolicyError> {
    let json = serde_json::to_string(ckpt).map_err(|e| err(path, e.to_string()))?;
    std::fs::write(path, json).map_err(|e| err(path, e.to_string()))
}

/// Loads a checkpoint and refuses it unless it was produced from the corpus
/// with hash `expected_corpus_hash` and its parameter shapes are consistent.
pub fn load_checkpoint(path: &Path, expected_corpus_hash: &str) -> Result<Checkpoint, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|e| err(path, e.to_string()))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| err(path, e.to_string()))?;
    if ckpt.schema_version != CHECKPOINT_VERSION {
        return Err(err(
            path,
            format!("unsupported schema_version {}", ckpt.schema_version),
        ));
    }
    if ckpt.corpus_hash != expected_corpus_hash {
        return Err(err(
            path,
            format!(
                "corpus hash mismatch: checkpoint {}, dataset {}",
                ckpt.corpus_hash, expected_corpus_hash
            ),
        ));
    }
    let m = &ckpt.model;
    if m.w.len() != m.vocab_size * m.state_dim() || m.b.len() != m.vocab_size {
        return Err(err(path, "parameter shapes do not match declared dimensions"));
    }
    if (m.bos as usize) >= m.vocab_size {
        return Err(err(path, "bos token outside vocabulary"));
    }
    if let Some(i) = m.params().iter().position(|x| !x.is_finite()) {
        return Err(err(path, format!("non-finite parameter at index {i}")));
    }
    Ok(ckpt)
}
