//! Toy-naming reward and within-group advantage normalization.
//!
//! A caption earns, for every annotated toy it names, the role weight times
//! the score of the precision level it was named at. With the default
//! [`Credit::Highest`] a toy named at several levels is credited once, at the
//! most specific level matched.

use crate::corpus::{PrecisionLevel, ToyAnnotation, ToyRole};
use crate::metrics::{match_toy, Caption};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite reward in group")]
    NonFinite,
    #[error("invalid reward config: {field}: {message}")]
    Config { field: &'static str, message: String },
}

/// How a toy named at more than one level is credited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Credit {
    #[default]
    Highest,
    PerLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl LevelScores {
    pub fn get(&self, level: PrecisionLevel) -> f64 {
        match level {
            PrecisionLevel::Low => self.low,
            PrecisionLevel::Medium => self.medium,
            PrecisionLevel::High => self.high,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_f: f64,
    pub w_b: f64,
    pub scores: LevelScores,
    pub credit: Credit,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_f: 1.0,
            w_b: 0.5,
            scores: LevelScores {
                low: 1.0,
                medium: 2.0,
                high: 3.0,
            },
            credit: Credit::Highest,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (field, w) in [("w_f", self.w_f), ("w_b", self.w_b)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(RewardError::Config {
                    field,
                    message: format!("must be finite and >= 0, got {w}"),
                });
            }
        }
        let s = self.scores;
        if ![s.low, s.medium, s.high].iter().all(|x| x.is_finite())
            || !(s.low < s.medium && s.medium < s.high)
        {
            return Err(RewardError::Config {
                field: "scores",
                message: format!(
                    "must be finite and strictly increasing, got {}/{}/{}",
                    s.low, s.medium, s.high
                ),
            });
        }
        Ok(())
    }

    pub fn weight(&self, role: ToyRole) -> f64 {
        match role {
            ToyRole::Foreground => self.w_f,
            ToyRole::Background => self.w_b,
        }
    }
}

/// Contribution of one toy to the caption reward.
pub fn toy_credit(caption: &Caption, toy: &ToyAnnotation, cfg: &RewardConfig) -> f64 {
    let w = cfg.weight(toy.role);
    let hit = |level: PrecisionLevel| match_toy(caption, toy.names.get(level));
    match cfg.credit {
        Credit::Highest => PrecisionLevel::ALL
            .into_iter()
            .rev()
            .find(|&l| hit(l))
            .map_or(0.0, |l| w * cfg.scores.get(l)),
        Credit::PerLevel => PrecisionLevel::ALL
            .into_iter()
            .filter(|&l| hit(l))
            .map(|l| w * cfg.scores.get(l))
            .sum(),
    }
}

/// Reward of one caption against the annotated toys of its image.
pub fn reward(caption: &Caption, toys: &[ToyAnnotation], cfg: &RewardConfig) -> f64 {
    toys.iter().map(|t| toy_credit(caption, t, cfg)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub is_zero_group: bool,
    pub is_uniform_group: bool,
}

impl GroupRewards {
    pub fn sum(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.rewards.len() as f64
    }

    pub fn mean_abs_advantage(&self) -> f64 {
        self.advantages.iter().map(|a| a.abs()).sum::<f64>() / self.advantages.len() as f64
    }
}

/// Z-scores rewards within a group using the population standard deviation.
/// A group with identical rewards gets all-zero advantages.
pub fn normalize_advantages(rewards: &[f64]) -> Result<GroupRewards, RewardError> {
    let g = rewards.len();
    if g < 2 {
        return Err(RewardError::GroupTooSmall(g));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite);
    }
    let is_zero_group = rewards.iter().all(|&r| r == 0.0);
    let is_uniform_group = rewards.iter().all(|&r| r == rewards[0]);
    let advantages = if is_uniform_group {
        vec![0.0; g]
    } else {
        let mean = rewards.iter().sum::<f64>() / g as f64;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
        let std = var.sqrt();
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(GroupRewards {
        rewards: rewards.to_vec(),
        advantages,
        is_zero_group,
        is_uniform_group,
    })
}
