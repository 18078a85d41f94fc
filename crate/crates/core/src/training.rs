//! Supervised warm-up, pure group-relative training and the reward-conditional
//! switch with a zero-reward buffer.
//!
//! In the switching loop each hybrid step first checks the buffer. With fewer
//! than `batch_size` buffered samples it draws a sample, runs a group-relative
//! update and buffers the sample if every rollout scored exactly zero.
//! Otherwise it pops `batch_size` samples and takes one supervised mini-batch
//! step on their ground-truth captions.

use crate::corpus::{DatasetHeader, Sample, PROMPT_CAPTION, PROMPT_TOY_ANNOTATED};
use crate::metrics::Caption;
use crate::policy::{self, Gradient, PolicyError, PolicyModel, Rollout};
use crate::reward::{self, GroupRewards, RewardConfig, RewardError};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("invalid trainer config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Warm-up only.
    Sft,
    /// Warm-up, then group-relative steps only.
    Grpo,
    /// Warm-up, then the reward-conditional switching loop.
    #[default]
    Rsrs,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sft => "sft",
            Mode::Grpo => "grpo",
            Mode::Rsrs => "rsrs",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    #[default]
    Fifo,
    /// Pops a seeded uniformly random subset of the buffer.
    Random,
}

/// Which training samples feed the hybrid stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridSplit {
    /// Every training sample.
    #[default]
    Shared,
    /// Only samples not eligible for warm-up.
    Disjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub warmup_steps: usize,
    pub hybrid_steps: usize,
    pub group_size: usize,
    pub batch_size: usize,
    pub clip_eps: f64,
    pub lr_sft: f64,
    pub lr_grpo: f64,
    /// Surrogate updates per sampled group; the old policy is refreshed after.
    pub grpo_inner_steps: usize,
    pub buffer_policy: BufferPolicy,
    pub hybrid_split: HybridSplit,
    /// Held-out NLL is traced every this many warm-up steps (0 disables).
    pub nll_every: usize,
    pub seed: u64,
    pub reward: RewardConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rsrs,
            warmup_steps: 2000,
            hybrid_steps: 3000,
            group_size: 4,
            batch_size: 4,
            clip_eps: 0.2,
            lr_sft: 0.05,
            lr_grpo: 0.01,
            grpo_inner_steps: 1,
            buffer_policy: BufferPolicy::Fifo,
            hybrid_split: HybridSplit::Shared,
            nll_every: 100,
            seed: 7,
            reward: RewardConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |field, message: String| Err(TrainingError::Config { field, message });
        if self.group_size < 2 {
            return bad("group_size", format!("must be >= 2, got {}", self.group_size));
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.clip_eps.is_finite() && self.clip_eps > 0.0) {
            return bad("clip_eps", format!("must be finite and > 0, got {}", self.clip_eps));
        }
        for (field, lr) in [("lr_sft", self.lr_sft), ("lr_grpo", self.lr_grpo)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(field, format!("must be finite and > 0, got {lr}"));
            }
        }
        if self.grpo_inner_steps < 1 {
            return bad("grpo_inner_steps", "must be >= 1".into());
        }
        self.reward.validate().map_err(|e| TrainingError::Config {
            field: "reward",
            message: e.to_string(),
        })
    }

    /// Steps run after warm-up for this mode.
    pub fn effective_hybrid_steps(&self) -> usize {
        match self.mode {
            Mode::Sft => 0,
            Mode::Grpo | Mode::Rsrs => self.hybrid_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    SftWarmup,
    GrpoBranch,
    SftFromBuffer,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::SftWarmup, Branch::GrpoBranch, Branch::SftFromBuffer];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::SftWarmup => "sft_warmup",
            Branch::GrpoBranch => "grpo_branch",
            Branch::SftFromBuffer => "sft_from_buffer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based, counting warm-up and hybrid steps together.
    pub step: usize,
    pub branch: Branch,
    pub sample_ids: Vec<String>,
    /// Group rewards; empty for supervised steps.
    pub rewards: Vec<f64>,
    pub mean_abs_advantage: f64,
    pub grad_norm: f64,
    /// Mean NLL of the batch before a supervised step, or the surrogate value
    /// before a group-relative step.
    pub loss: f64,
    pub is_zero_group: bool,
    pub is_uniform_group: bool,
    pub clipped_tokens: usize,
    pub enqueued: bool,
    pub params_changed: bool,
    pub buffer_size: usize,
}

impl StepRecord {
    pub fn mean_reward(&self) -> Option<f64> {
        (!self.rewards.is_empty()).then(|| self.rewards.iter().sum::<f64>() / self.rewards.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllPoint {
    pub step: usize,
    pub heldout_nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferStats {
    pub enqueued: usize,
    pub dequeued: usize,
    pub final_size: usize,
    pub high_water: usize,
}

/// Samples whose whole group scored zero, awaiting a supervised step.
#[derive(Clone, Debug, Default)]
pub struct ZeroRewardBuffer {
    queue: VecDeque<usize>,
    stats: BufferStats,
}

impl ZeroRewardBuffer {
    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn push(&mut self, sample: usize) {
        self.queue.push_back(sample);
        self.stats.enqueued += 1;
        self.stats.high_water = self.stats.high_water.max(self.queue.len());
    }

    /// Removes `n` samples (or all, if fewer are buffered).
    pub fn pop_batch<R: Rng + ?Sized>(&mut self, n: usize, policy: BufferPolicy, rng: &mut R) -> Vec<usize> {
        let n = n.min(self.queue.len());
        let out: Vec<usize> = match policy {
            BufferPolicy::Fifo => self.queue.drain(..n).collect(),
            BufferPolicy::Random => {
                let mut picks = index::sample(rng, self.queue.len(), n).into_vec();
                picks.sort_unstable();
                let out = picks.iter().map(|&i| self.queue[i]).collect();
                for &i in picks.iter().rev() {
                    self.queue.remove(i);
                }
                out
            }
        };
        self.stats.dequeued += out.len();
        out
    }

    pub fn stats(&self) -> BufferStats {
        BufferStats {
            final_size: self.queue.len(),
            ..self.stats.clone()
        }
    }
}

/// A generated token sequence as a caption: everything before the first
/// end-of-sequence token.
pub fn generated_caption(tokens: &[u32], eos: u32) -> Caption {
    let end = tokens.iter().position(|&t| t == eos).unwrap_or(tokens.len());
    Caption::Tokens(tokens[..end].to_vec())
}

/// Outcome of one group-relative update.
#[derive(Clone, Debug, PartialEq)]
pub struct GrpoOutcome {
    pub group: GroupRewards,
    pub grad_norm: f64,
    pub objective: f64,
    pub clipped_tokens: usize,
    pub params_changed: bool,
}

fn descent_direction(ascent: &Gradient) -> Gradient {
    // `0.0 - x` keeps +0.0 for zero entries, so a zero gradient leaves every
    // parameter bit-identical, including negative zeros.
    Gradient {
        w: ascent.w.iter().map(|x| 0.0 - x).collect(),
        b: ascent.b.iter().map(|x| 0.0 - x).collect(),
    }
}

fn bits(m: &PolicyModel) -> impl Iterator<Item = u64> + '_ {
    m.w.iter().chain(&m.b).map(|x| x.to_bits())
}

/// Scores `rollouts`, normalizes advantages and applies the surrogate update.
/// A uniform group yields a zero gradient and the update is a no-op.
pub fn grpo_update(
    model: &mut PolicyModel,
    sample: &Sample,
    rollouts: &[Rollout],
    eos: u32,
    cfg: &TrainerConfig,
) -> Result<GrpoOutcome, TrainingError> {
    let rewards: Vec<f64> = rollouts
        .iter()
        .map(|r| reward::reward(&generated_caption(&r.tokens, eos), &sample.toys, &cfg.reward))
        .collect();
    let group = reward::normalize_advantages(&rewards)?;
    let before = model.clone();
    let mut grad_norm = 0.0;
    let mut objective = 0.0;
    let mut clipped_tokens = 0;
    for inner in 0..cfg.grpo_inner_steps {
        let eval = policy::grad_grpo(model, &sample.features, rollouts, &group.advantages, cfg.clip_eps)?;
        if inner == 0 {
            objective = eval.objective;
        }
        grad_norm += eval.gradient.norm();
        clipped_tokens += eval.clipped_tokens;
        policy::sgd_step(model, &descent_direction(&eval.gradient), cfg.lr_grpo)?;
    }
    let params_changed = !bits(&before).eq(bits(model));
    Ok(GrpoOutcome {
        group,
        grad_norm,
        objective,
        clipped_tokens,
        params_changed,
    })
}

/// Samples a group from the current policy and applies [`grpo_update`].
pub fn grpo_step<R: Rng + ?Sized>(
    model: &mut PolicyModel,
    sample: &Sample,
    eos: u32,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<GrpoOutcome, TrainingError> {
    let rollouts = policy::sample_group(model, &sample.features, cfg.group_size, rng)?;
    grpo_update(model, sample, &rollouts, eos, cfg)
}

/// One averaged-NLL step on a mini-batch; returns (mean NLL before, gradient norm).
pub fn sft_step(model: &mut PolicyModel, batch: &[&Sample], lr: f64) -> Result<(f64, f64), TrainingError> {
    let mut grad = Gradient::zeros_like(model);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        loss += policy::nll(model, &s.features, &s.ground_truth)?;
        grad.add_scaled(&policy::grad_nll(model, &s.features, &s.ground_truth)?, scale);
    }
    policy::sgd_step(model, &grad, lr)?;
    Ok((loss * scale, grad.norm()))
}

/// Mean per-caption NLL over `samples`.
pub fn mean_nll(model: &PolicyModel, samples: &[&Sample]) -> Result<f64, TrainingError> {
    let mut total = 0.0;
    for s in samples {
        total += policy::nll(model, &s.features, &s.ground_truth)?;
    }
    Ok(total / samples.len() as f64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_WARMUP: u64 = 1;
const STREAM_PICK: u64 = 2;
const STREAM_ROLLOUT: u64 = 3;
const STREAM_BUFFER: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub records: Vec<StepRecord>,
    pub nll_trace: Vec<NllPoint>,
    pub buffer: BufferStats,
}

impl Telemetry {
    pub fn branch_histogram(&self) -> BTreeMap<Branch, usize> {
        let mut h: BTreeMap<Branch, usize> = Branch::ALL.iter().map(|&b| (b, 0)).collect();
        for r in &self.records {
            *h.entry(r.branch).or_default() += 1;
        }
        h
    }
}

/// Owns the policy and the sampling state of one training run.
pub struct Trainer<'a> {
    pub cfg: TrainerConfig,
    pub model: PolicyModel,
    eos: u32,
    train: &'a [Sample],
    heldout: Vec<&'a Sample>,
    warmup_pool: Vec<usize>,
    hybrid_pool: Vec<usize>,
    buffer: ZeroRewardBuffer,
    telemetry: Telemetry,
    step: usize,
    warm_order: Vec<usize>,
    warm_pos: usize,
    rng_warmup: ChaCha8Rng,
    rng_pick: ChaCha8Rng,
    rng_rollout: ChaCha8Rng,
    rng_buffer: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    /// Warm-up draws from plain-caption samples; the hybrid stage draws per
    /// `cfg.hybrid_split`.
    pub fn new(
        cfg: TrainerConfig,
        model: PolicyModel,
        header: &DatasetHeader,
        train: &'a [Sample],
        heldout: &'a [Sample],
    ) -> Result<Self, TrainingError> {
        cfg.validate()?;
        let warmup_pool: Vec<usize> = (0..train.len())
            .filter(|&i| train[i].prompt_id == PROMPT_CAPTION)
            .collect();
        let hybrid_pool: Vec<usize> = match cfg.hybrid_split {
            HybridSplit::Shared => (0..train.len()).collect(),
            HybridSplit::Disjoint => (0..train.len())
                .filter(|&i| train[i].prompt_id == PROMPT_TOY_ANNOTATED)
                .collect(),
        };
        Ok(Self {
            eos: header.special.eos,
            train,
            heldout: heldout.iter().collect(),
            warmup_pool,
            hybrid_pool,
            buffer: ZeroRewardBuffer::default(),
            telemetry: Telemetry {
                records: Vec::new(),
                nll_trace: Vec::new(),
                buffer: BufferStats::default(),
            },
            step: 0,
            warm_order: Vec::new(),
            warm_pos: 0,
            rng_warmup: stream(cfg.seed, STREAM_WARMUP),
            rng_pick: stream(cfg.seed, STREAM_PICK),
            rng_rollout: stream(cfg.seed, STREAM_ROLLOUT),
            rng_buffer: stream(cfg.seed, STREAM_BUFFER),
            cfg,
            model,
        })
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.telemetry.records
    }

    fn trace_nll(&mut self) -> Result<(), TrainingError> {
        if !self.heldout.is_empty() {
            let heldout_nll = mean_nll(&self.model, &self.heldout)?;
            self.telemetry.nll_trace.push(NllPoint {
                step: self.step,
                heldout_nll,
            });
        }
        Ok(())
    }

    fn next_warmup_batch(&mut self) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if self.warm_pos == self.warm_order.len() {
                self.warm_order = self.warmup_pool.clone();
                self.warm_order.shuffle(&mut self.rng_warmup);
                self.warm_pos = 0;
            }
            batch.push(self.warm_order[self.warm_pos]);
            self.warm_pos += 1;
        }
        batch
    }

    fn supervised(&mut self, idx: &[usize], branch: Branch) -> Result<(), TrainingError> {
        let batch: Vec<&Sample> = idx.iter().map(|&i| &self.train[i]).collect();
        let (loss, grad_norm) = sft_step(&mut self.model, &batch, self.cfg.lr_sft)?;
        self.step += 1;
        self.telemetry.records.push(StepRecord {
            step: self.step,
            branch,
            sample_ids: batch.iter().map(|s| s.sample_id.clone()).collect(),
            rewards: Vec::new(),
            mean_abs_advantage: 0.0,
            grad_norm,
            loss,
            is_zero_group: false,
            is_uniform_group: false,
            clipped_tokens: 0,
            enqueued: false,
            params_changed: grad_norm > 0.0,
            buffer_size: self.buffer.len(),
        });
        Ok(())
    }

    /// Runs `cfg.warmup_steps` supervised mini-batch steps.
    pub fn run_warmup(&mut self) -> Result<(), TrainingError> {
        if self.cfg.warmup_steps == 0 {
            return Ok(());
        }
        if self.warmup_pool.is_empty() {
            return Err(TrainingError::EmptyPool("warm-up"));
        }
        self.trace_nll()?;
        for k in 1..=self.cfg.warmup_steps {
            let batch = self.next_warmup_batch();
            self.supervised(&batch, Branch::SftWarmup)?;
            let due = (self.cfg.nll_every > 0 && k % self.cfg.nll_every == 0) || k == self.cfg.warmup_steps;
            if due && self.telemetry.nll_trace.last().map(|p| p.step) != Some(self.step) {
                self.trace_nll()?;
            }
        }
        Ok(())
    }

    /// One hybrid step. Pure group-relative mode never buffers.
    pub fn hybrid_step(&mut self) -> Result<(), TrainingError> {
        if self.hybrid_pool.is_empty() {
            return Err(TrainingError::EmptyPool("hybrid"));
        }
        let switching = self.cfg.mode == Mode::Rsrs;
        if switching && self.buffer.len() >= self.cfg.batch_size {
            let batch = self
                .buffer
                .pop_batch(self.cfg.batch_size, self.cfg.buffer_policy, &mut self.rng_buffer);
            return self.supervised(&batch, Branch::SftFromBuffer);
        }
        let idx = self.hybrid_pool[self.rng_pick.random_range(0..self.hybrid_pool.len())];
        let sample = &self.train[idx];
        let out = grpo_step(&mut self.model, sample, self.eos, &self.cfg, &mut self.rng_rollout)?;
        let enqueued = switching && out.group.sum() == 0.0;
        if enqueued {
            self.buffer.push(idx);
        }
        self.step += 1;
        self.telemetry.records.push(StepRecord {
            step: self.step,
            branch: Branch::GrpoBranch,
            sample_ids: vec![sample.sample_id.clone()],
            mean_abs_advantage: out.group.mean_abs_advantage(),
            rewards: out.group.rewards,
            grad_norm: out.grad_norm,
            loss: out.objective,
            is_zero_group: out.group.is_zero_group,
            is_uniform_group: out.group.is_uniform_group,
            clipped_tokens: out.clipped_tokens,
            enqueued,
            params_changed: out.params_changed,
            buffer_size: self.buffer.len(),
        });
        Ok(())
    }

    /// Warm-up followed by the mode's hybrid steps.
    pub fn run(mut self) -> Result<(PolicyModel, Telemetry), TrainingError> {
        self.run_warmup()?;
        for _ in 0..self.cfg.effective_hybrid_steps() {
            self.hybrid_step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> (PolicyModel, Telemetry) {
        self.telemetry.buffer = self.buffer.stats();
        (self.model, self.telemetry)
    }
}

/// Convenience wrapper running [`Trainer::run`].
pub fn train(
    cfg: &TrainerConfig,
    model: PolicyModel,
    header: &DatasetHeader,
    train: &[Sample],
    heldout: &[Sample],
) -> Result<(PolicyModel, Telemetry), TrainingError> {
    Trainer::new(cfg.clone(), model, header, train, heldout)?.run()
}
