use super::{validate_sample, CorpusError, Dataset, DatasetHeader, Sample, SCHEMA_VERSION};
use std::collections::BTreeSet;
use std::path::Path;

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    std::fs::write(path, dataset.to_jsonl()).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a dataset file. An empty file is an empty dataset.
pub fn read_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub(crate) fn parse_dataset(text: &str) -> Result<Dataset, CorpusError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let Some((line, first)) = lines.next() else {
        return Ok(Dataset::default());
    };
    let header: DatasetHeader = serde_json::from_str(first).map_err(|e| CorpusError::Parse {
        line,
        message: format!("header: {e}"),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(CorpusError::Invalid {
            line,
            field: "schema_version".into(),
            message: format!(
                "unsupported version {}, expected {SCHEMA_VERSION}",
                header.schema_version
            ),
        });
    }
    let s = header.special;
    if !header.vocab.is_empty()
        && [s.bos, s.eos, s.pad]
            .iter()
            .any(|&t| t as usize >= header.vocab.len())
    {
        return Err(CorpusError::Invalid {
            line,
            field: "special".into(),
            message: "special token outside vocabulary".into(),
        });
    }

    let mut samples = Vec::new();
    let mut ids = BTreeSet::new();
    for (line, raw) in lines {
        let sample: Sample = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        validate_sample(&header, &sample)
            .map_err(|(field, message)| CorpusError::Invalid {
                line,
                field,
                message,
            })?;
        if !ids.insert(sample.sample_id.clone()) {
            return Err(CorpusError::Invalid {
                line,
                field: "sample_id".into(),
                message: format!("duplicate id `{}`", sample.sample_id),
            });
        }
        samples.push(sample);
    }
    Ok(Dataset { header, samples })
}
