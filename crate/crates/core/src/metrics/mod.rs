//! Caption evaluation: toy-name matching, the six-cell toy recognition score,
//! toy recognition precision and rank correlation.

mod matching;
mod precision;
mod rank;
mod tts;

pub use matching::{gamma, match_toy, normalize_text, Caption};
pub use precision::{ground_truth_names, toy_precision, NameDictionary, PrecisionOutcome, PrecisionReport};
pub use rank::{kendall_tau, midranks, spearman_rho, RankError};
pub use tts::{match_outcomes, tts, CellStat, MatchOutcome, Pooling, TtsReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty evaluation: no annotated toy instances")]
    EmptyEvaluation,
}
