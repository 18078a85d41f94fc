//! Corpus data model: annotated teaching toys, samples and the on-disk dataset.
//!
//! A [`Sample`] stands in for one annotated image. The image itself is replaced
//! by a feature vector, the caption is a fixed-length token sequence ending in
//! `<eos>`, and every toy in the picture carries its role (foreground or
//! background prop) plus its names at three levels of domain specificity.
//!
//! Names are either token sequences (synthetic mode) or raw strings (text
//! mode). The matcher in [`crate::metrics`] defines how each mode is compared
//! against a caption.

mod generate;
mod io;

pub use generate::{generate_corpus, CorpusConfig, ToyInventory, ToySpec};
pub use io::{read_dataset, write_dataset};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

/// Dataset schema version written into every header line.
pub const SCHEMA_VERSION: u32 = 1;

/// Prompt used for plain captioning pairs (warm-up data).
pub const PROMPT_CAPTION: u32 = 0;
/// Prompt used for captioning pairs that ship a curated toy annotation set
/// (hybrid-stage data).
pub const PROMPT_TOY_ANNOTATED: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("vocabulary too small: need at least {needed} tokens, vocab_size is {vocab_size}")]
    Capacity { needed: usize, vocab_size: usize },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid field `{field}`: {message}")]
    Invalid {
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Specificity of a toy name, ordered `Low < Medium < High`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionLevel {
    Low,
    Medium,
    High,
}

impl PrecisionLevel {
    pub const ALL: [PrecisionLevel; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

impl fmt::Display for PrecisionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a toy is actively used in the scene or only a background prop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyRole {
    Foreground,
    Background,
}

impl ToyRole {
    pub const ALL: [ToyRole; 2] = [Self::Foreground, Self::Background];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Foreground => "foreground",
            Self::Background => "background",
        }
    }
}

impl fmt::Display for ToyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One name variant of a toy.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Name {
    Tokens(Vec<u32>),
    Text(String),
}

impl Name {
    pub fn is_empty(&self) -> bool {
        match self {
            Name::Tokens(t) => t.is_empty(),
            Name::Text(s) => s.trim().is_empty(),
        }
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Name::Tokens(t) => write!(f, "{t:?}"),
            Name::Text(s) => f.write_str(s),
        }
    }
}

/// Names of one toy at every precision level. An unannotated level is an
/// empty list; all three keys are required on disk.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NameSet {
    pub low: Vec<Name>,
    pub medium: Vec<Name>,
    pub high: Vec<Name>,
}

impl NameSet {
    pub fn get(&self, level: PrecisionLevel) -> &[Name] {
        match level {
            PrecisionLevel::Low => &self.low,
            PrecisionLevel::Medium => &self.medium,
            PrecisionLevel::High => &self.high,
        }
    }

    pub fn get_mut(&mut self, level: PrecisionLevel) -> &mut Vec<Name> {
        match level {
            PrecisionLevel::Low => &mut self.low,
            PrecisionLevel::Medium => &mut self.medium,
            PrecisionLevel::High => &mut self.high,
        }
    }

    pub fn highest_populated(&self) -> Option<PrecisionLevel> {
        PrecisionLevel::ALL
            .into_iter()
            .rev()
            .find(|&l| !self.get(l).is_empty())
    }

    pub fn iter(&self) -> impl Iterator<Item = (PrecisionLevel, &Name)> {
        PrecisionLevel::ALL
            .into_iter()
            .flat_map(move |l| self.get(l).iter().map(move |n| (l, n)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyAnnotation {
    pub canonical_id: String,
    pub role: ToyRole,
    pub names: NameSet,
}

/// Generator bookkeeping; trainers never branch on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Easy,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub sample_id: String,
    pub features: Vec<f64>,
    pub prompt_id: u32,
    pub ground_truth: Vec<u32>,
    pub toys: Vec<ToyAnnotation>,
    pub hardness: Hardness,
}

impl Sample {
    pub fn toys_with_role(&self, role: ToyRole) -> impl Iterator<Item = &ToyAnnotation> {
        self.toys.iter().filter(move |t| t.role == role)
    }
}

/// Reserved token ids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
}

/// First line of every dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub vocab: Vec<String>,
    pub feature_dim: usize,
    pub caption_length: usize,
    pub special: SpecialTokens,
    /// Generator settings, absent for externally authored datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<CorpusConfig>,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            vocab: Vec::new(),
            feature_dim: 0,
            caption_length: 0,
            special: SpecialTokens::default(),
            config: None,
        }
    }
}

impl DatasetHeader {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Renders a token sequence as space-separated vocabulary words.
    pub fn render(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| {
                self.vocab
                    .get(t as usize)
                    .map(String::as_str)
                    .unwrap_or("<oov>")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Serialized JSONL form: header line followed by one sample per line.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for s in &self.samples {
            serde_json::to_writer(&mut out, s).expect("sample serializes");
            out.push(b'\n');
        }
        out
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl()))
    }

    pub fn find(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Every distinct toy name in the dataset, sorted.
    pub fn name_inventory(&self) -> Vec<Name> {
        let mut names: Vec<Name> = self
            .samples
            .iter()
            .flat_map(|s| s.toys.iter())
            .flat_map(|t| t.names.iter().map(|(_, n)| n.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Checks one sample against the header and the sample invariants.
/// Returns `(field, message)` for the first violation.
pub fn validate_sample(header: &DatasetHeader, sample: &Sample) -> Result<(), (String, String)> {
    let bad = |field: &str, message: String| Err((field.to_string(), message));
    if sample.sample_id.is_empty() {
        return bad("sample_id", "empty".into());
    }
    if sample.features.len() != header.feature_dim {
        return bad(
            "features",
            format!(
                "expected dimension {}, got {}",
                header.feature_dim,
                sample.features.len()
            ),
        );
    }
    if sample.features.iter().any(|x| !x.is_finite()) {
        return bad("features", "non-finite value".into());
    }
    if sample.ground_truth.len() != header.caption_length {
        return bad(
            "ground_truth",
            format!(
                "expected length {}, got {}",
                header.caption_length,
                sample.ground_truth.len()
            ),
        );
    }
    let vocab = header.vocab_size();
    if let Some(&t) = sample.ground_truth.iter().find(|&&t| t as usize >= vocab) {
        return bad("ground_truth", format!("token {t} outside vocabulary of {vocab}"));
    }
    let mut seen = std::collections::BTreeMap::new();
    for (i, toy) in sample.toys.iter().enumerate() {
        if let Some(prev) = seen.insert(toy.canonical_id.as_str(), toy.role) {
            let msg = if prev != toy.role {
                format!("toy `{}` is both foreground and background", toy.canonical_id)
            } else {
                format!("toy `{}` annotated twice", toy.canonical_id)
            };
            return bad(&format!("toys[{i}].canonical_id"), msg);
        }
        for level in PrecisionLevel::ALL {
            for name in toy.names.get(level) {
                if name.is_empty() {
                    return bad(&format!("toys[{i}].names.{level}"), "empty name".into());
                }
                if let Name::Tokens(t) = name {
                    if let Some(&tok) = t.iter().find(|&&tok| tok as usize >= vocab) {
                        return bad(
                            &format!("toys[{i}].names.{level}"),
                            format!("token {tok} outside vocabulary of {vocab}"),
                        );
                    }
                }
            }
        }
        for (a, b) in [
            (PrecisionLevel::Low, PrecisionLevel::Medium),
            (PrecisionLevel::Low, PrecisionLevel::High),
            (PrecisionLevel::Medium, PrecisionLevel::High),
        ] {
            if toy.names.get(a).iter().any(|n| toy.names.get(b).contains(n)) {
                return bad(
                    &format!("toys[{i}].names"),
                    format!("levels {a} and {b} share a name"),
                );
            }
        }
        if toy.role == ToyRole::Foreground {
            if let Some(top) = toy.names.highest_populated() {
                let caption = crate::metrics::Caption::Tokens(sample.ground_truth.clone());
                let rendered = crate::metrics::Caption::Text(header.render(&sample.ground_truth));
                let hit = toy.names.get(top).iter().any(|n| match n {
                    Name::Tokens(_) => crate::metrics::match_toy(&caption, std::slice::from_ref(n)),
                    Name::Text(_) => crate::metrics::match_toy(&rendered, std::slice::from_ref(n)),
                });
                if !hit {
                    return bad(
                        "ground_truth",
                        format!(
                            "foreground toy `{}` not mentioned at its {top} level",
                            toy.canonical_id
                        ),
                    );
                }
            }
        }
    }
    Ok(())
}
