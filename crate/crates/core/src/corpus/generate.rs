//! Deterministic synthetic corpus generator.
//!
//! The toy inventory (per-toy feature directions and name tokens) is drawn
//! from the config seed; every sample is then drawn from its own ChaCha stream
//! keyed by the sample index, so generation is a pure function of the config.
//!
//! Hard samples only contain "rare" toys: toys that never occur in any easy
//! sample. A policy warmed up on easy data has never seen their name tokens
//! and practically never emits them, which is what produces all-zero reward
//! groups during group-relative training.

use super::{
    CorpusError, Dataset, DatasetHeader, Hardness, Name, NameSet, PrecisionLevel, Sample,
    SpecialTokens, ToyAnnotation, ToyRole, PROMPT_CAPTION, PROMPT_TOY_ANNOTATED, SCHEMA_VERSION,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const INVENTORY_STREAM: u64 = u64::MAX;
const HARDNESS_STREAM: u64 = u64::MAX - 1;

const FILLER_WORDS: [&str; 8] = [
    "child", "plays", "with", "teacher", "builds", "in", "the", "corner",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub caption_length: usize,
    pub n_samples: usize,
    pub hard_fraction: f64,
    /// Inclusive range of annotated toys per sample.
    pub toys_per_sample: (usize, usize),
    pub n_toys: usize,
    pub n_fillers: usize,
    pub noise_sigma: f64,
    /// Probability that a ground-truth caption additionally names a
    /// foreground toy at its low (resp. medium) level.
    pub extra_name_prob: f64,
    /// Probability that a ground-truth caption mentions a background toy.
    pub background_mention_prob: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 96,
            feature_dim: 32,
            caption_length: 8,
            n_samples: 2000,
            hard_fraction: 0.3,
            toys_per_sample: (1, 4),
            n_toys: 24,
            n_fillers: FILLER_WORDS.len(),
            noise_sigma: 0.1,
            extra_name_prob: 0.3,
            background_mention_prob: 0.35,
            seed: 7,
        }
    }
}

const N_SPECIAL: usize = 3;

impl CorpusConfig {
    /// Tokens the inventory needs: specials, fillers and three names per toy.
    pub fn required_vocab(&self) -> usize {
        N_SPECIAL + self.n_fillers + 3 * self.n_toys
    }

    pub fn n_hard(&self) -> usize {
        (self.hard_fraction * self.n_samples as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let cfg = |field, message: String| Err(CorpusError::Config { field, message });
        if self.feature_dim == 0 {
            return cfg("feature_dim", "must be positive".into());
        }
        if self.caption_length < 3 {
            return cfg(
                "caption_length",
                format!("must be at least 3, got {}", self.caption_length),
            );
        }
        if self.n_samples == 0 {
            return cfg("n_samples", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return cfg(
                "hard_fraction",
                format!("must lie in [0, 1], got {}", self.hard_fraction),
            );
        }
        let (lo, hi) = self.toys_per_sample;
        if lo == 0 || lo > hi {
            return cfg(
                "toys_per_sample",
                format!("need 1 <= min <= max, got ({lo}, {hi})"),
            );
        }
        if self.n_toys == 0 {
            return cfg("n_toys", "must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return cfg("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma));
        }
        for (field, p) in [
            ("extra_name_prob", self.extra_name_prob),
            ("background_mention_prob", self.background_mention_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(field, format!("must lie in [0, 1], got {p}"));
            }
        }
        if self.vocab_size < self.required_vocab() {
            return Err(CorpusError::Capacity {
                needed: self.required_vocab(),
                vocab_size: self.vocab_size,
            });
        }
        let n_hard = self.n_hard();
        if n_hard > 0 && n_hard < self.n_samples && self.n_toys < 2 {
            return Err(CorpusError::Config {
                field: "n_toys",
                message: "need at least 2 toys to separate easy and hard samples".into(),
            });
        }
        Ok(())
    }
}

/// One toy of the inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub canonical_id: String,
    pub names: NameSet,
    /// Unit vector the toy adds to a sample's features.
    pub direction: Vec<f64>,
    /// Rare toys occur only in hard samples.
    pub rare: bool,
}

impl ToySpec {
    pub fn annotate(&self, role: ToyRole) -> ToyAnnotation {
        ToyAnnotation {
            canonical_id: self.canonical_id.clone(),
            role,
            names: self.names.clone(),
        }
    }

    fn name_tokens(&self, level: PrecisionLevel) -> Vec<u32> {
        match self.names.get(level).first() {
            Some(Name::Tokens(t)) => t.clone(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyInventory {
    pub toys: Vec<ToySpec>,
    pub vocab: Vec<String>,
    pub special: SpecialTokens,
    pub filler_tokens: Vec<u32>,
}

impl ToyInventory {
    /// Builds the vocabulary and toy inventory for `cfg`.
    pub fn from_config(cfg: &CorpusConfig) -> Result<Self, CorpusError> {
        cfg.validate()?;
        let special = SpecialTokens { bos: 0, eos: 1, pad: 2 };
        let mut vocab: Vec<String> = vec!["<bos>".into(), "<eos>".into(), "<pad>".into()];
        let mut filler_tokens = Vec::with_capacity(cfg.n_fillers);
        for k in 0..cfg.n_fillers {
            filler_tokens.push(vocab.len() as u32);
            vocab.push(match FILLER_WORDS.get(k) {
                Some(w) => (*w).to_string(),
                None => format!("word{k}"),
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(INVENTORY_STREAM);

        let mut toys = Vec::with_capacity(cfg.n_toys);
        for k in 0..cfg.n_toys {
            let mut names = NameSet::default();
            for level in PrecisionLevel::ALL {
                names
                    .get_mut(level)
                    .push(Name::Tokens(vec![vocab.len() as u32]));
                vocab.push(format!("{}_{k:02}", level.as_str()));
            }
            let mut direction: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                direction.iter_mut().for_each(|x| *x /= norm);
            }
            toys.push(ToySpec {
                canonical_id: format!("toy-{k:02}"),
                names,
                direction,
                rare: false,
            });
        }
        while vocab.len() < cfg.vocab_size {
            vocab.push(format!("<unused{}>", vocab.len()));
        }

        let n_hard = cfg.n_hard();
        let n_rare = if n_hard == 0 {
            0
        } else if n_hard == cfg.n_samples {
            cfg.n_toys
        } else {
            ((cfg.hard_fraction * cfg.n_toys as f64).ceil() as usize).clamp(1, cfg.n_toys - 1)
        };
        let mut order: Vec<usize> = (0..cfg.n_toys).collect();
        order.shuffle(&mut rng);
        for &k in &order[..n_rare] {
            toys[k].rare = true;
        }

        Ok(Self {
            toys,
            vocab,
            special,
            filler_tokens,
        })
    }

    fn pool(&self, rare: bool) -> Vec<usize> {
        (0..self.toys.len())
            .filter(|&k| self.toys[k].rare == rare)
            .collect()
    }
}

/// Generates the synthetic dataset described by `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Dataset, CorpusError> {
    let inventory = ToyInventory::from_config(config)?;

    let n_hard = config.n_hard();
    let mut hard = vec![false; config.n_samples];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(HARDNESS_STREAM);
    let mut idx: Vec<usize> = (0..config.n_samples).collect();
    idx.shuffle(&mut rng);
    for &i in &idx[..n_hard] {
        hard[i] = true;
    }

    let easy_pool = inventory.pool(false);
    let rare_pool = inventory.pool(true);
    let samples = (0..config.n_samples)
        .map(|i| {
            let pool = if hard[i] { &rare_pool } else { &easy_pool };
            generate_sample(config, &inventory, pool, i, hard[i])
        })
        .collect();

    Ok(Dataset {
        header: DatasetHeader {
            schema_version: SCHEMA_VERSION,
            vocab: inventory.vocab.clone(),
            feature_dim: config.feature_dim,
            caption_length: config.caption_length,
            special: inventory.special,
            config: Some(config.clone()),
        },
        samples,
    })
}

fn generate_sample(
    cfg: &CorpusConfig,
    inv: &ToyInventory,
    pool: &[usize],
    index: usize,
    hard: bool,
) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let (lo, hi) = cfg.toys_per_sample;
    let k = rng.random_range(lo..=hi).min(pool.len());
    let mut pool = pool.to_vec();
    let (chosen, _) = pool.partial_shuffle(&mut rng, k);
    let chosen = chosen.to_vec();
    let n_fg = if k >= 2 { rng.random_range(1..=2) } else { k };

    let mut features: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut toys = Vec::with_capacity(k);
    for (j, &t) in chosen.iter().enumerate() {
        let role = if j < n_fg {
            ToyRole::Foreground
        } else {
            ToyRole::Background
        };
        for (f, d) in features.iter_mut().zip(&inv.toys[t].direction) {
            *f += d;
        }
        toys.push(inv.toys[t].annotate(role));
    }

    // Every foreground toy is named at its most specific level; extra
    // mentions are added while the caption has room.
    let mut required: Vec<Vec<u32>> = Vec::new();
    let mut optional: Vec<Vec<u32>> = Vec::new();
    for (j, &t) in chosen.iter().enumerate() {
        let toy = &inv.toys[t];
        if j < n_fg {
            required.push(toy.name_tokens(PrecisionLevel::High));
            for level in [PrecisionLevel::Low, PrecisionLevel::Medium] {
                if rng.random_bool(cfg.extra_name_prob) {
                    optional.push(toy.name_tokens(level));
                }
            }
        } else if rng.random_bool(cfg.background_mention_prob) {
            let level = PrecisionLevel::ALL[rng.random_range(0..3)];
            optional.push(toy.name_tokens(level));
        }
    }
    optional.shuffle(&mut rng);

    let content = cfg.caption_length - 1;
    let mut used: usize = required.iter().map(Vec::len).sum();
    let mut mentions = required;
    for m in optional {
        if used + m.len() <= content {
            used += m.len();
            mentions.push(m);
        }
    }
    mentions.shuffle(&mut rng);

    let mut ground_truth = Vec::with_capacity(cfg.caption_length);
    for m in mentions {
        if used < content && rng.random_bool(0.5) {
            let w = inv.filler_tokens.choose(&mut rng).copied().unwrap_or(inv.special.pad);
            ground_truth.push(w);
            used += 1;
        }
        ground_truth.extend(m);
    }
    ground_truth.resize(content, inv.special.pad);
    ground_truth.push(inv.special.eos);

    let prompt_id = if hard || rng.random_bool(0.5) {
        PROMPT_TOY_ANNOTATED
    } else {
        PROMPT_CAPTION
    };

    Sample {
        sample_id: format!("s{index:05}"),
        features,
        prompt_id,
        ground_truth,
        toys,
        hardness: if hard { Hardness::Hard } else { Hardness::Easy },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_sample;
    use std::collections::BTreeSet;

    fn small(seed: u64, n: usize, hard_fraction: f64) -> CorpusConfig {
        CorpusConfig {
            seed,
            n_samples: n,
            hard_fraction,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn hard_count_is_forced_by_config() {
        let d = generate_corpus(&small(7, 100, 0.2)).unwrap();
        assert_eq!(d.samples.len(), 100);
        let hard = d
            .samples
            .iter()
            .filter(|s| s.hardness == Hardness::Hard)
            .count();
        assert_eq!(hard, 20);
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = generate_corpus(&small(7, 100, 0.2)).unwrap();
        let b = generate_corpus(&small(7, 100, 0.2)).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_corpus(&small(8, 100, 0.2)).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn every_foreground_name_token_is_covered_without_hard_samples() {
        let d = generate_corpus(&small(3, 1000, 0.0)).unwrap();
        let gt: BTreeSet<u32> = d
            .samples
            .iter()
            .flat_map(|s| s.ground_truth.iter().copied())
            .collect();
        let mut checked = 0;
        for s in &d.samples {
            for toy in s.toys_with_role(ToyRole::Foreground) {
                for (_, name) in toy.names.iter() {
                    let Name::Tokens(t) = name else { unreachable!() };
                    assert!(t.iter().all(|x| gt.contains(x)), "{name} never in a caption");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn hard_samples_are_separated_from_easy_captions() {
        let d = generate_corpus(&small(11, 400, 0.3)).unwrap();
        let easy_tokens: BTreeSet<u32> = d
            .samples
            .iter()
            .filter(|s| s.hardness == Hardness::Easy)
            .flat_map(|s| s.ground_truth.iter().copied())
            .collect();
        for s in d.samples.iter().filter(|s| s.hardness == Hardness::Hard) {
            for toy in s.toys_with_role(ToyRole::Foreground) {
                for level in [PrecisionLevel::Medium, PrecisionLevel::High] {
                    for name in toy.names.get(level) {
                        let Name::Tokens(t) = name else { unreachable!() };
                        assert!(t.iter().all(|x| !easy_tokens.contains(x)));
                    }
                }
            }
            assert_eq!(s.prompt_id, PROMPT_TOY_ANNOTATED);
        }
    }

    #[test]
    fn generated_samples_satisfy_invariants() {
        let d = generate_corpus(&small(5, 300, 0.5)).unwrap();
        for s in &d.samples {
            validate_sample(&d.header, s).unwrap();
            assert!(s.toys_with_role(ToyRole::Foreground).count() >= 1);
            assert_eq!(*s.ground_truth.last().unwrap(), d.header.special.eos);
        }
    }

    #[test]
    fn all_hard_and_all_easy_extremes() {
        for hf in [0.0, 1.0] {
            let d = generate_corpus(&small(2, 50, hf)).unwrap();
            for s in &d.samples {
                validate_sample(&d.header, s).unwrap();
            }
        }
    }

    #[test]
    fn undersized_vocab_is_a_capacity_error() {
        let cfg = CorpusConfig {
            vocab_size: 40,
            ..CorpusConfig::default()
        };
        match generate_corpus(&cfg) {
            Err(CorpusError::Capacity { needed, vocab_size }) => {
                assert_eq!(needed, 83);
                assert_eq!(vocab_size, 40);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_fraction_names_the_field() {
        let err = generate_corpus(&small(1, 10, 1.5)).unwrap_err();
        assert!(err.to_string().contains("hard_fraction"));
    }

    #[test]
    fn features_follow_toy_directions() {
        let cfg = CorpusConfig {
            noise_sigma: 0.0,
            ..small(9, 20, 0.0)
        };
        let inv = ToyInventory::from_config(&cfg).unwrap();
        let d = generate_corpus(&cfg).unwrap();
        for s in &d.samples {
            let mut expect = vec![0.0; cfg.feature_dim];
            for toy in &s.toys {
                let spec = inv
                    .toys
                    .iter()
                    .find(|t| t.canonical_id == toy.canonical_id)
                    .unwrap();
                for (e, x) in expect.iter_mut().zip(&spec.direction) {
                    *e += x;
                }
            }
            for (a, b) in expect.iter().zip(&s.features) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
