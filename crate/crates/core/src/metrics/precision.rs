//! Toy recognition precision: how many of the toy names a caption mentions
//! are actually annotated for the image.

use super::matching::{match_toy, Caption};
use crate::corpus::{Name, ToyAnnotation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionOutcome {
    pub count: usize,
    pub true_positives: usize,
    /// `None` when nothing was predicted.
    pub precision: Option<f64>,
}

pub fn toy_precision(predicted: &BTreeSet<Name>, ground_truth: &BTreeSet<Name>) -> PrecisionOutcome {
    let tp = predicted.intersection(ground_truth).count();
    let count = predicted.len();
    PrecisionOutcome {
        count,
        true_positives: tp,
        precision: (count > 0).then(|| tp as f64 / count as f64),
    }
}

/// Deterministic extractor of predicted toy names: every inventory name the
/// caption matches.
#[derive(Clone, Debug, Default)]
pub struct NameDictionary {
    names: Vec<Name>,
}

impl NameDictionary {
    pub fn new(names: impl IntoIterator<Item = Name>) -> Self {
        let mut names: Vec<Name> = names.into_iter().filter(|n| !n.is_empty()).collect();
        names.sort();
        names.dedup();
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn extract(&self, caption: &Caption) -> BTreeSet<Name> {
        self.names
            .iter()
            .filter(|n| match_toy(caption, std::slice::from_ref(n)))
            .cloned()
            .collect()
    }
}

/// All name variants of the annotated toys.
pub fn ground_truth_names(toys: &[ToyAnnotation]) -> BTreeSet<Name> {
    toys.iter()
        .flat_map(|t| t.names.iter().map(|(_, n)| n.clone()))
        .collect()
}

/// Precision aggregated over captions: mean predicted count and pooled
/// precision (total true positives over total predictions).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub n_captions: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub mean_count: f64,
    pub precision: Option<f64>,
}

impl PrecisionReport {
    pub fn evaluate<'a, I>(dict: &NameDictionary, items: I) -> Self
    where
        I: IntoIterator<Item = (&'a [ToyAnnotation], &'a [Caption])>,
    {
        let mut report = PrecisionReport::default();
        for (toys, candidates) in items {
            let gt = ground_truth_names(toys);
            for c in candidates {
                let o = toy_precision(&dict.extract(c), &gt);
                report.n_captions += 1;
                report.predicted += o.count;
                report.true_positives += o.true_positives;
            }
        }
        if report.n_captions > 0 {
            report.mean_count = report.predicted as f64 / report.n_captions as f64;
        }
        if report.predicted > 0 {
            report.precision = Some(report.true_positives as f64 / report.predicted as f64);
        }
        report
    }
}
