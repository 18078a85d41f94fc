//! Planted-quality ranking study for the reward, and rank correlation between
//! ranking files.
//!
//! Each synthetic image has one foreground and one background toy. Its
//! candidate captions name those toys at planted combinations of precision
//! levels chosen so that every candidate has a distinct reward, and the
//! planted quality of a candidate is the rank of its reward. A simulated
//! annotator reports the planted quality, except that with probability
//! `noise` a candidate's quality is replaced by a uniformly random one. The
//! reward ranker orders candidates by computed reward.

use crate::corpus::{CorpusConfig, CorpusError, PrecisionLevel, ToyAnnotation, ToyInventory, ToyRole};
use crate::metrics::{kendall_tau, spearman_rho, Caption};
use crate::reward::{reward, RewardConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error("invalid study config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("coverage mismatch: {0}")]
    Coverage(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One ranked position: a single candidate or a group of tied candidates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankItem {
    One(String),
    Tied(Vec<String>),
}

impl RankItem {
    pub fn ids(&self) -> &[String] {
        match self {
            RankItem::One(id) => std::slice::from_ref(id),
            RankItem::Tied(ids) => ids,
        }
    }
}

/// Candidates of one image, best first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingEntry {
    pub image_id: String,
    pub ranking: Vec<RankItem>,
}

impl RankingEntry {
    /// Builds a ranking from scores, higher is better; equal scores tie.
    pub fn from_scores(image_id: impl Into<String>, scored: &[(String, f64)]) -> Self {
        let mut sorted: Vec<&(String, f64)> = scored.iter().collect();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut ranking = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j].1 == sorted[i].1 {
                j += 1;
            }
            ranking.push(if j - i == 1 {
                RankItem::One(sorted[i].0.clone())
            } else {
                RankItem::Tied(sorted[i..j].iter().map(|p| p.0.clone()).collect())
            });
            i = j;
        }
        Self {
            image_id: image_id.into(),
            ranking,
        }
    }

    /// Candidate id to score, where the best position scores highest.
    pub fn scores(&self) -> BTreeMap<&str, f64> {
        let n = self.ranking.len() as f64;
        self.ranking
            .iter()
            .enumerate()
            .flat_map(|(k, item)| item.ids().iter().map(move |id| (id.as_str(), n - k as f64)))
            .collect()
    }
}

pub fn read_rankings(path: &Path) -> Result<Vec<RankingEntry>, ValidationError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ValidationError::Io { path: p.clone(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ValidationError::Parse {
                path: p.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_rankings(entries: &[RankingEntry], path: &Path) -> Result<(), ValidationError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("in-memory serialization"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| ValidationError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageCorrelation {
    pub image_id: String,
    /// `None` when either ranking ties every candidate.
    pub tau: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_images: usize,
    /// Images excluded from the means because a correlation was undefined.
    pub n_undefined: usize,
    pub mean_tau: Option<f64>,
    pub mean_rho: Option<f64>,
    pub per_image: Vec<ImageCorrelation>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-image Kendall tau-b and Spearman rho between two rankings of the same
/// images and candidates.
pub fn correlate(a: &[RankingEntry], b: &[RankingEntry]) -> Result<CorrelationReport, ValidationError> {
    let index = |entries: &[RankingEntry], which: &str| -> Result<BTreeMap<String, usize>, ValidationError> {
        let mut m = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if m.insert(e.image_id.clone(), i).is_some() {
                return Err(ValidationError::Coverage(format!(
                    "image {} listed twice in {which}",
                    e.image_id
                )));
            }
        }
        Ok(m)
    };
    let ia = index(a, "first ranking")?;
    let ib = index(b, "second ranking")?;
    let ka: BTreeSet<&String> = ia.keys().collect();
    let kb: BTreeSet<&String> = ib.keys().collect();
    if ka != kb {
        let only: Vec<String> = ka.symmetric_difference(&kb).map(|s| s.to_string()).collect();
        return Err(ValidationError::Coverage(format!(
            "images present in only one ranking: {}",
            only.join(", ")
        )));
    }

    let mut per_image = Vec::with_capacity(a.len());
    for e in a {
        let other = &b[ib[&e.image_id]];
        let sa = e.scores();
        let sb = other.scores();
        let ids_a: BTreeSet<&str> = sa.keys().copied().collect();
        let ids_b: BTreeSet<&str> = sb.keys().copied().collect();
        let n_listed: usize = e.ranking.iter().map(|r| r.ids().len()).sum();
        let n_listed_b: usize = other.ranking.iter().map(|r| r.ids().len()).sum();
        if ids_a != ids_b || n_listed != ids_a.len() || n_listed_b != ids_b.len() {
            return Err(ValidationError::Coverage(format!(
                "image {}: candidate sets differ or repeat",
                e.image_id
            )));
        }
        let xa: Vec<f64> = sa.values().copied().collect();
        let xb: Vec<f64> = ids_a.iter().map(|id| sb[id]).collect();
        per_image.push(ImageCorrelation {
            image_id: e.image_id.clone(),
            tau: kendall_tau(&xa, &xb).ok(),
            rho: spearman_rho(&xa, &xb).ok(),
        });
    }
    let defined = || per_image.iter().filter(|c| c.tau.is_some() && c.rho.is_some());
    Ok(CorrelationReport {
        n_images: per_image.len(),
        n_undefined: per_image.len() - defined().count(),
        mean_tau: mean(defined().filter_map(|c| c.tau)),
        mean_rho: mean(defined().filter_map(|c| c.rho)),
        per_image,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_images: usize,
    pub n_captions: usize,
    /// Probability that the annotator's score for a candidate is random.
    pub noise: f64,
    pub seed: u64,
    pub reward: RewardConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_images: 100,
            n_captions: 5,
            noise: 0.2,
            seed: 7,
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedCandidate {
    pub caption_id: String,
    pub tokens: Vec<u32>,
    pub planted_quality: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedImage {
    pub image_id: String,
    pub toys: Vec<ToyAnnotation>,
    pub candidates: Vec<PlantedCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedStudy {
    pub config: StudyConfig,
    pub images: Vec<PlantedImage>,
    pub annotator: Vec<RankingEntry>,
    pub reward_ranker: Vec<RankingEntry>,
    pub correlation: CorrelationReport,
}

type Combo = (Option<PrecisionLevel>, Option<PrecisionLevel>);

/// `k` reward levels spread evenly over the distinct rewards reachable by
/// naming the foreground and background toy at some level or not at all,
/// each with the combinations that reach it.
fn rungs(cfg: &RewardConfig, k: usize) -> Result<Vec<Vec<Combo>>, ValidationError> {
    let levels = [None, Some(PrecisionLevel::Low), Some(PrecisionLevel::Medium), Some(PrecisionLevel::High)];
    let score = |role: ToyRole, l: Option<PrecisionLevel>| l.map_or(0.0, |l| cfg.weight(role) * cfg.scores.get(l));
    let mut by_value: Vec<(f64, Vec<Combo>)> = Vec::new();
    for f in levels {
        for b in levels {
            let v = score(ToyRole::Foreground, f) + score(ToyRole::Background, b);
            match by_value.iter_mut().find(|(x, _)| *x == v) {
                Some((_, combos)) => combos.push((f, b)),
                None => by_value.push((v, vec![(f, b)])),
            }
        }
    }
    by_value.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = by_value.len();
    if k < 2 || k > m {
        return Err(ValidationError::Config {
            field: "n_captions",
            message: format!("must be in [2, {m}] for this reward config, got {k}"),
        });
    }
    Ok((0..k)
        .map(|i| by_value[(i * (m - 1) + (k - 1) / 2) / (k - 1)].1.clone())
        .collect())
}

/// Generates the planted study and correlates the reward ranker with the
/// simulated annotator.
pub fn planted_study(cfg: &StudyConfig) -> Result<PlantedStudy, ValidationError> {
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(ValidationError::Config {
            field: "noise",
            message: format!("must be in [0, 1], got {}", cfg.noise),
        });
    }
    if cfg.n_images == 0 {
        return Err(ValidationError::Config {
            field: "n_images",
            message: "must be >= 1".into(),
        });
    }
    cfg.reward.validate().map_err(|e| ValidationError::Config {
        field: "reward",
        message: e.to_string(),
    })?;
    let rungs = rungs(&cfg.reward, cfg.n_captions)?;
    let inventory = ToyInventory::from_config(&CorpusConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut images = Vec::with_capacity(cfg.n_images);
    let mut annotator = Vec::with_capacity(cfg.n_images);
    let mut reward_ranker = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        let image_id = format!("img{i:04}");
        let pair: Vec<_> = inventory.toys.choose_multiple(&mut rng, 2).collect();
        let toys = vec![
            pair[0].annotate(ToyRole::Foreground),
            pair[1].annotate(ToyRole::Background),
        ];
        let mut ids: Vec<usize> = (0..rungs.len()).collect();
        ids.shuffle(&mut rng);

        let mut candidates = Vec::with_capacity(rungs.len());
        for (quality, combos) in rungs.iter().enumerate() {
            let &(f, b) = combos.choose(&mut rng).expect("rung has a combination");
            let mut tokens: Vec<u32> = Vec::new();
            for (toy, level) in toys.iter().zip([f, b]) {
                if let Some(level) = level {
                    if let Some(crate::corpus::Name::Tokens(t)) = toy.names.get(level).first() {
                        tokens.extend(t);
                    }
                }
            }
            tokens.push(*inventory.filler_tokens.choose(&mut rng).expect("fillers"));
            tokens.shuffle(&mut rng);
            let r = reward(&Caption::Tokens(tokens.clone()), &toys, &cfg.reward);
            candidates.push(PlantedCandidate {
                caption_id: format!("c{}", ids[quality]),
                tokens,
                planted_quality: quality,
                reward: r,
            });
        }

        let k = rungs.len();
        let human: Vec<(String, f64)> = candidates
            .iter()
            .map(|c| {
                let q = if rng.random_bool(cfg.noise) {
                    rng.random_range(0..k)
                } else {
                    c.planted_quality
                };
                (c.caption_id.clone(), q as f64)
            })
            .collect();
        let by_reward: Vec<(String, f64)> = candidates.iter().map(|c| (c.caption_id.clone(), c.reward)).collect();
        annotator.push(RankingEntry::from_scores(image_id.clone(), &human));
        reward_ranker.push(RankingEntry::from_scores(image_id.clone(), &by_reward));
        images.push(PlantedImage {
            image_id,
            toys,
            candidates,
        });
    }
    let correlation = correlate(&reward_ranker, &annotator)?;
    Ok(PlantedStudy {
        config: cfg.clone(),
        images,
        annotator,
        reward_ranker,
        correlation,
    })
}
