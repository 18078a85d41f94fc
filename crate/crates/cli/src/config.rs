//! Flat run configuration: every knob is an optional key in a TOML file and
//! an optional command-line flag. Flags override file values; anything left
//! unset takes the library default.

use crate::error::CliError;
use clap::Args;
use rsrs_core::corpus::CorpusConfig;
use rsrs_core::experiment::ExperimentConfig;
use rsrs_core::metrics::Pooling;
use rsrs_core::reward::{Credit, LevelScores, RewardConfig};
use rsrs_core::training::{BufferPolicy, HybridSplit, Mode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

macro_rules! overlay {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            /// Fields set in `self` win over those in `base`.
            pub fn over(self, base: $ty) -> $ty {
                $ty { $($field: self.$field.or(base.$field)),* }
            }
        }
    };
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusOpts {
    /// Number of samples to generate.
    #[arg(long = "n", alias = "n-samples")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub hard_fraction: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub caption_length: Option<usize>,
    #[arg(long)]
    pub n_toys: Option<usize>,
    #[arg(long)]
    pub n_fillers: Option<usize>,
    #[arg(long)]
    pub toys_min: Option<usize>,
    #[arg(long)]
    pub toys_max: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub extra_name_prob: Option<f64>,
    #[arg(long)]
    pub background_mention_prob: Option<f64>,
}

overlay!(CorpusOpts {
    n_samples, hard_fraction, vocab_size, feature_dim, caption_length, n_toys, n_fillers,
    toys_min, toys_max, noise_sigma, extra_name_prob, background_mention_prob,
});

impl CorpusOpts {
    pub fn resolve(&self, seed: Option<u64>) -> CorpusConfig {
        let d = CorpusConfig::default();
        CorpusConfig {
            vocab_size: self.vocab_size.unwrap_or(d.vocab_size),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            caption_length: self.caption_length.unwrap_or(d.caption_length),
            n_samples: self.n_samples.unwrap_or(d.n_samples),
            hard_fraction: self.hard_fraction.unwrap_or(d.hard_fraction),
            toys_per_sample: (
                self.toys_min.unwrap_or(d.toys_per_sample.0),
                self.toys_max.unwrap_or(d.toys_per_sample.1),
            ),
            n_toys: self.n_toys.unwrap_or(d.n_toys),
            n_fillers: self.n_fillers.unwrap_or(d.n_fillers),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            extra_name_prob: self.extra_name_prob.unwrap_or(d.extra_name_prob),
            background_mention_prob: self.background_mention_prob.unwrap_or(d.background_mention_prob),
            seed: seed.unwrap_or(d.seed),
        }
    }

    pub fn from_config(c: &CorpusConfig) -> Self {
        Self {
            n_samples: Some(c.n_samples),
            hard_fraction: Some(c.hard_fraction),
            vocab_size: Some(c.vocab_size),
            feature_dim: Some(c.feature_dim),
            caption_length: Some(c.caption_length),
            n_toys: Some(c.n_toys),
            n_fillers: Some(c.n_fillers),
            toys_min: Some(c.toys_per_sample.0),
            toys_max: Some(c.toys_per_sample.1),
            noise_sigma: Some(c.noise_sigma),
            extra_name_prob: Some(c.extra_name_prob),
            background_mention_prob: Some(c.background_mention_prob),
        }
    }
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardOpts {
    #[arg(long)]
    pub w_f: Option<f64>,
    #[arg(long)]
    pub w_b: Option<f64>,
    #[arg(long)]
    pub score_low: Option<f64>,
    #[arg(long)]
    pub score_medium: Option<f64>,
    #[arg(long)]
    pub score_high: Option<f64>,
    /// How a toy named at several levels is credited: highest or per_level.
    #[arg(long, value_parser = parse_enum::<Credit>)]
    pub credit: Option<Credit>,
}

overlay!(RewardOpts { w_f, w_b, score_low, score_medium, score_high, credit });

impl RewardOpts {
    pub fn resolve(&self) -> RewardConfig {
        let d = RewardConfig::default();
        RewardConfig {
            w_f: self.w_f.unwrap_or(d.w_f),
            w_b: self.w_b.unwrap_or(d.w_b),
            scores: LevelScores {
                low: self.score_low.unwrap_or(d.scores.low),
                medium: self.score_medium.unwrap_or(d.scores.medium),
                high: self.score_high.unwrap_or(d.scores.high),
            },
            credit: self.credit.unwrap_or(d.credit),
        }
    }

    pub fn from_config(c: &RewardConfig) -> Self {
        Self {
            w_f: Some(c.w_f),
            w_b: Some(c.w_b),
            score_low: Some(c.scores.low),
            score_medium: Some(c.scores.medium),
            score_high: Some(c.scores.high),
            credit: Some(c.credit),
        }
    }
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOpts {
    /// Training regime: sft, grpo or rsrs.
    #[arg(long, value_parser = parse_enum::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub hybrid_steps: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    pub lr_sft: Option<f64>,
    #[arg(long)]
    pub lr_grpo: Option<f64>,
    #[arg(long)]
    pub grpo_inner_steps: Option<usize>,
    /// fifo or random.
    #[arg(long, value_parser = parse_enum::<BufferPolicy>)]
    pub buffer_policy: Option<BufferPolicy>,
    /// shared or disjoint.
    #[arg(long, value_parser = parse_enum::<HybridSplit>)]
    pub hybrid_split: Option<HybridSplit>,
    #[arg(long)]
    pub nll_every: Option<usize>,
    #[arg(long)]
    pub heldout_fraction: Option<f64>,
    #[arg(long)]
    pub eval_candidates: Option<usize>,
    /// micro or per-image.
    #[arg(long, value_parser = parse_enum::<Pooling>)]
    pub pooling: Option<Pooling>,
}

overlay!(TrainOpts {
    mode, warmup_steps, hybrid_steps, group_size, batch_size, clip_eps, lr_sft, lr_grpo,
    grpo_inner_steps, buffer_policy, hybrid_split, nll_every, heldout_fraction,
    eval_candidates, pooling,
});

impl TrainOpts {
    pub fn resolve(&self, seed: Option<u64>, reward: RewardConfig) -> ExperimentConfig {
        let d = ExperimentConfig::default();
        let t = d.trainer;
        ExperimentConfig {
            trainer: rsrs_core::training::TrainerConfig {
                mode: self.mode.unwrap_or(t.mode),
                warmup_steps: self.warmup_steps.unwrap_or(t.warmup_steps),
                hybrid_steps: self.hybrid_steps.unwrap_or(t.hybrid_steps),
                group_size: self.group_size.unwrap_or(t.group_size),
                batch_size: self.batch_size.unwrap_or(t.batch_size),
                clip_eps: self.clip_eps.unwrap_or(t.clip_eps),
                lr_sft: self.lr_sft.unwrap_or(t.lr_sft),
                lr_grpo: self.lr_grpo.unwrap_or(t.lr_grpo),
                grpo_inner_steps: self.grpo_inner_steps.unwrap_or(t.grpo_inner_steps),
                buffer_policy: self.buffer_policy.unwrap_or(t.buffer_policy),
                hybrid_split: self.hybrid_split.unwrap_or(t.hybrid_split),
                nll_every: self.nll_every.unwrap_or(t.nll_every),
                seed: seed.unwrap_or(t.seed),
                reward,
            },
            heldout_fraction: self.heldout_fraction.unwrap_or(d.heldout_fraction),
            eval_candidates: self.eval_candidates.unwrap_or(d.eval_candidates),
            pooling: self.pooling.unwrap_or(d.pooling),
        }
    }

    pub fn from_config(c: &ExperimentConfig) -> Self {
        let t = &c.trainer;
        Self {
            mode: Some(t.mode),
            warmup_steps: Some(t.warmup_steps),
            hybrid_steps: Some(t.hybrid_steps),
            group_size: Some(t.group_size),
            batch_size: Some(t.batch_size),
            clip_eps: Some(t.clip_eps),
            lr_sft: Some(t.lr_sft),
            lr_grpo: Some(t.lr_grpo),
            grpo_inner_steps: Some(t.grpo_inner_steps),
            buffer_policy: Some(t.buffer_policy),
            hybrid_split: Some(t.hybrid_split),
            nll_every: Some(t.nll_every),
            heldout_fraction: Some(c.heldout_fraction),
            eval_candidates: Some(c.eval_candidates),
            pooling: Some(c.pooling),
        }
    }
}

/// Parses a value with the same spelling the config file uses.
pub fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
        .map_err(|e| e.to_string())
}

/// Everything a config file may contain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub corpus: CorpusOpts,
    #[serde(flatten)]
    pub train: TrainOpts,
    #[serde(flatten)]
    pub reward: RewardOpts,
    #[serde(flatten, skip_serializing)]
    unknown: BTreeMap<String, toml::Value>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if !cfg.unknown.is_empty() {
            let keys: Vec<&str> = cfg.unknown.keys().map(String::as_str).collect();
            return Err(format!("unknown key(s): {}", keys.join(", ")));
        }
        Ok(cfg)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Fully resolved training configuration as a flat file.
    pub fn effective_train(exp: &ExperimentConfig, data: &Path, checkpoint: Option<&Path>) -> Self {
        Self {
            seed: Some(exp.trainer.seed),
            data: Some(data.to_path_buf()),
            out_dir: None,
            checkpoint: checkpoint.map(Path::to_path_buf),
            corpus: CorpusOpts::default(),
            train: TrainOpts::from_config(exp),
            reward: RewardOpts::from_config(&exp.trainer.reward),
            unknown: BTreeMap::new(),
        }
    }

    pub fn effective_corpus(c: &CorpusConfig) -> Self {
        Self {
            seed: Some(c.seed),
            corpus: CorpusOpts::from_config(c),
            ..Self::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}
