use crate::corpus::{Name, PrecisionLevel, ToyAnnotation};
use serde::{Deserialize, Serialize};

/// A generated caption: token ids in synthetic mode, free text otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Caption {
    Tokens(Vec<u32>),
    Text(String),
}

impl From<Vec<u32>> for Caption {
    fn from(t: Vec<u32>) -> Self {
        Caption::Tokens(t)
    }
}

impl From<&str> for Caption {
    fn from(s: &str) -> Self {
        Caption::Text(s.to_string())
    }
}

/// Trim, lowercase and collapse runs of whitespace to one space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_run(haystack: &[u32], needle: &[u32]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True iff any name variant occurs in the caption.
///
/// Token captions match token names as contiguous runs; text captions match
/// text names as substrings after [`normalize_text`]. A name in the other mode
/// never matches, and neither does an empty name.
pub fn match_toy(caption: &Caption, variants: &[Name]) -> bool {
    match caption {
        Caption::Tokens(c) => variants.iter().any(|v| match v {
            Name::Tokens(n) => contains_run(c, n),
            Name::Text(_) => false,
        }),
        Caption::Text(c) => {
            let c = normalize_text(c);
            variants.iter().any(|v| match v {
                Name::Text(n) => {
                    let n = normalize_text(n);
                    !n.is_empty() && c.contains(&n)
                }
                Name::Tokens(_) => false,
            })
        }
    }
}

/// Whether at least one candidate names `toy` at `level`.
pub fn gamma(toy: &ToyAnnotation, level: PrecisionLevel, candidates: &[Caption]) -> bool {
    let names = toy.names.get(level);
    candidates.iter().any(|c| match_toy(c, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NameSet, ToyRole};

    fn toy(low: &[u32]) -> ToyAnnotation {
        ToyAnnotation {
            canonical_id: "t".into(),
            role: ToyRole::Foreground,
            names: NameSet {
                low: low.iter().map(|&t| Name::Tokens(vec![t])).collect(),
                ..NameSet::default()
            },
        }
    }

    #[test]
    fn contiguous_token_run_matches() {
        let c = Caption::Tokens(vec![5, 9, 3, 1]);
        assert!(match_toy(&c, &[Name::Tokens(vec![9, 3])]));
        assert!(!match_toy(&c, &[Name::Tokens(vec![9, 1])]));
        assert!(!match_toy(&c, &[Name::Tokens(vec![5, 9, 3, 1, 0])]));
    }

    #[test]
    fn text_substring_is_normalized() {
        let c = Caption::from("child holds green clay");
        assert!(!match_toy(&c, &[Name::Text("modeling clay".into())]));
        let c = Caption::from("  The child  shapes MODELING\tclay ");
        assert!(match_toy(&c, &[Name::Text("modeling   clay".into())]));
    }

    #[test]
    fn empty_variants_never_match() {
        assert!(!match_toy(&Caption::Tokens(vec![1, 2]), &[]));
        assert!(!match_toy(&Caption::from("anything"), &[Name::Text("  ".into())]));
        assert!(!match_toy(&Caption::Tokens(vec![1]), &[Name::Tokens(vec![])]));
    }

    #[test]
    fn mixed_modes_do_not_match() {
        assert!(!match_toy(&Caption::Tokens(vec![1]), &[Name::Text("1".into())]));
        assert!(!match_toy(&Caption::from("1"), &[Name::Tokens(vec![1])]));
    }

    #[test]
    fn gamma_is_a_disjunction_over_candidates() {
        let t = toy(&[7]);
        let miss = Caption::Tokens(vec![1, 2]);
        let hit = Caption::Tokens(vec![3, 7]);
        assert!(gamma(&t, PrecisionLevel::Low, &[miss.clone(), hit.clone(), miss.clone()]));
        assert!(!gamma(&t, PrecisionLevel::Low, &[]));
        assert!(gamma(&t, PrecisionLevel::Low, &[hit.clone(), hit]));
        assert!(!gamma(&t, PrecisionLevel::High, &[Caption::Tokens(vec![7])]));
    }
}
