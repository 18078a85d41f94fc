//! Teaching toy recognition score.
//!
//! Every (toy, level) pair whose name list is non-empty is one instance. An
//! instance is recognised when at least one candidate caption names the toy
//! at that level. The six cells split instances by role and level; the
//! aggregate pools every instance of every cell.

use super::matching::{gamma, Caption};
use super::MetricsError;
use crate::corpus::{PrecisionLevel, ToyAnnotation, ToyRole};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub toy_id: String,
    pub level: PrecisionLevel,
    pub role: ToyRole,
    pub matched: bool,
}

/// How instances are pooled across images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// One rate over all instances of all images.
    #[default]
    Micro,
    /// Rate per image, then the mean over images where the cell is populated.
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub role: ToyRole,
    pub level: PrecisionLevel,
    pub matched: usize,
    pub total: usize,
    /// `None` when the cell has no instances.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtsReport {
    pub tts_fl: Option<f64>,
    pub tts_fm: Option<f64>,
    pub tts_fh: Option<f64>,
    pub tts_bl: Option<f64>,
    pub tts_bm: Option<f64>,
    pub tts_bh: Option<f64>,
    pub tts_aggregate: f64,
    pub matched: usize,
    pub total: usize,
    pub n_samples: usize,
    pub pooling: Pooling,
    pub cells: Vec<CellStat>,
}

fn cell_index(role: ToyRole, level: PrecisionLevel) -> usize {
    let r = match role {
        ToyRole::Foreground => 0,
        ToyRole::Background => 1,
    };
    r * 3 + level.index()
}

const CELL_LABELS: [&str; 6] = ["FL", "FM", "FH", "BL", "BM", "BH"];

impl TtsReport {
    pub fn cell(&self, role: ToyRole, level: PrecisionLevel) -> &CellStat {
        &self.cells[cell_index(role, level)]
    }

    pub fn rate(&self, role: ToyRole, level: PrecisionLevel) -> Option<f64> {
        self.cell(role, level).rate
    }

    pub fn labels() -> [&'static str; 6] {
        CELL_LABELS
    }

    /// The six cell rates in FL, FM, FH, BL, BM, BH order.
    pub fn rates(&self) -> [Option<f64>; 6] {
        [
            self.tts_fl,
            self.tts_fm,
            self.tts_fh,
            self.tts_bl,
            self.tts_bm,
            self.tts_bh,
        ]
    }
}

impl fmt::Display for TtsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>8} {:>8}", "cell", "rate(%)", "matched", "total")?;
        for (label, c) in CELL_LABELS.iter().zip(&self.cells) {
            let rate = c
                .rate
                .map(|r| format!("{:.2}", 100.0 * r))
                .unwrap_or_else(|| "absent".into());
            writeln!(f, "TTS-{label:<6} {rate:>9} {:>8} {:>8}", c.matched, c.total)?;
        }
        write!(
            f,
            "{:<10} {:>9.2} {:>8} {:>8}",
            "TTS",
            100.0 * self.tts_aggregate,
            self.matched,
            self.total
        )
    }
}

/// One outcome per populated (toy, level) pair of one image.
pub fn match_outcomes(toys: &[ToyAnnotation], candidates: &[Caption]) -> Vec<MatchOutcome> {
    let mut out = Vec::new();
    for toy in toys {
        for level in PrecisionLevel::ALL {
            if toy.names.get(level).is_empty() {
                continue;
            }
            out.push(MatchOutcome {
                toy_id: toy.canonical_id.clone(),
                level,
                role: toy.role,
                matched: gamma(toy, level, candidates),
            });
        }
    }
    out
}

/// Scores a set of images, each given as its toy annotations and candidates.
pub fn tts<'a, I>(items: I, pooling: Pooling) -> Result<TtsReport, MetricsError>
where
    I: IntoIterator<Item = (&'a [ToyAnnotation], &'a [Caption])>,
{
    let mut matched = [0usize; 6];
    let mut total = [0usize; 6];
    // per-image sums of rates and number of images contributing
    let mut rate_sum = [0.0f64; 6];
    let mut rate_n = [0usize; 6];
    let mut agg_sum = 0.0f64;
    let mut agg_n = 0usize;
    let mut n_samples = 0usize;

    for (toys, candidates) in items {
        n_samples += 1;
        let mut m = [0usize; 6];
        let mut t = [0usize; 6];
        for o in match_outcomes(toys, candidates) {
            let i = cell_index(o.role, o.level);
            t[i] += 1;
            if o.matched {
                m[i] += 1;
            }
        }
        for i in 0..6 {
            matched[i] += m[i];
            total[i] += t[i];
            if t[i] > 0 {
                rate_sum[i] += m[i] as f64 / t[i] as f64;
                rate_n[i] += 1;
            }
        }
        let (mi, ti) = (m.iter().sum::<usize>(), t.iter().sum::<usize>());
        if ti > 0 {
            agg_sum += mi as f64 / ti as f64;
            agg_n += 1;
        }
    }

    let all_total: usize = total.iter().sum();
    if all_total == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let all_matched: usize = matched.iter().sum();

    let mut cells = Vec::with_capacity(6);
    for role in ToyRole::ALL {
        for level in PrecisionLevel::ALL {
            let i = cell_index(role, level);
            let rate = match pooling {
                Pooling::Micro => (total[i] > 0).then(|| matched[i] as f64 / total[i] as f64),
                Pooling::PerImage => (rate_n[i] > 0).then(|| rate_sum[i] / rate_n[i] as f64),
            };
            cells.push(CellStat {
                role,
                level,
                matched: matched[i],
                total: total[i],
                rate,
            });
        }
    }
    let tts_aggregate = match pooling {
        Pooling::Micro => all_matched as f64 / all_total as f64,
        Pooling::PerImage => agg_sum / agg_n as f64,
    };
    Ok(TtsReport {
        tts_fl: cells[0].rate,
        tts_fm: cells[1].rate,
        tts_fh: cells[2].rate,
        tts_bl: cells[3].rate,
        tts_bm: cells[4].rate,
        tts_bh: cells[5].rate,
        tts_aggregate,
        matched: all_matched,
        total: all_total,
        n_samples,
        pooling,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Name, NameSet};

    fn toy(id: &str, role: ToyRole, low: u32, medium: Option<u32>, high: Option<u32>) -> ToyAnnotation {
        let one = |t: u32| vec![Name::Tokens(vec![t])];
        ToyAnnotation {
            canonical_id: id.into(),
            role,
            names: NameSet {
                low: one(low),
                medium: medium.map(one).unwrap_or_default(),
                high: high.map(one).unwrap_or_default(),
            },
        }
    }

    #[test]
    fn two_foreground_toys_one_matched() {
        let toys = vec![
            toy("a", ToyRole::Foreground, 10, None, None),
            toy("b", ToyRole::Foreground, 11, None, None),
        ];
        let cands = vec![Caption::Tokens(vec![1, 10, 2])];
        let r = tts([(&toys[..], &cands[..])], Pooling::Micro).unwrap();
        assert_eq!(r.tts_fl, Some(0.5));
        assert_eq!(r.tts_fm, None);
        assert_eq!(r.tts_bl, None);
        assert_eq!(r.tts_aggregate, 0.5);
    }

    #[test]
    fn everything_matched_gives_one() {
        let toys = vec![
            toy("a", ToyRole::Foreground, 10, Some(20), Some(30)),
            toy("b", ToyRole::Background, 11, Some(21), Some(31)),
        ];
        let cands = vec![
            Caption::Tokens(vec![10, 20, 30]),
            Caption::Tokens(vec![11, 21, 31]),
        ];
        let r = tts([(&toys[..], &cands[..])], Pooling::Micro).unwrap();
        for rate in r.rates() {
            assert_eq!(rate, Some(1.0));
        }
        assert_eq!(r.tts_aggregate, 1.0);
    }

    #[test]
    fn no_instances_is_an_error() {
        let none: Vec<ToyAnnotation> = vec![];
        let cands = vec![Caption::Tokens(vec![1])];
        assert_eq!(
            tts([(&none[..], &cands[..])], Pooling::Micro),
            Err(MetricsError::EmptyEvaluation)
        );
    }

    #[test]
    fn zero_candidates_score_zero_not_absent() {
        let toys = vec![toy("a", ToyRole::Foreground, 10, None, None)];
        let r = tts([(&toys[..], &[][..])], Pooling::Micro).unwrap();
        assert_eq!(r.tts_fl, Some(0.0));
    }

    #[test]
    fn per_image_pooling_differs_from_micro() {
        let img1 = vec![
            toy("a", ToyRole::Foreground, 10, None, None),
            toy("b", ToyRole::Foreground, 11, None, None),
            toy("c", ToyRole::Foreground, 12, None, None),
        ];
        let img2 = vec![toy("d", ToyRole::Foreground, 13, None, None)];
        let c1 = vec![Caption::Tokens(vec![10])];
        let c2 = vec![Caption::Tokens(vec![13])];
        let items = [(&img1[..], &c1[..]), (&img2[..], &c2[..])];
        let micro = tts(items, Pooling::Micro).unwrap();
        let per = tts(items, Pooling::PerImage).unwrap();
        assert_eq!(micro.tts_fl, Some(0.5));
        let expect = (1.0 / 3.0 + 1.0) / 2.0;
        assert!((per.tts_fl.unwrap() - expect).abs() < 1e-15);
        assert_eq!(per.total, micro.total);
    }
}
