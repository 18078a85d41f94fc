//! End-to-end runs: split the corpus, train in the selected mode, evaluate on
//! the held-out split and persist report, telemetry and checkpoint.
//!
//! Hardness labels are read only here, to break evaluation down into easy and
//! hard subsets; the trainer never sees them.

use crate::corpus::{Dataset, Hardness, Sample};
use crate::metrics::{tts, Caption, NameDictionary, Pooling, PrecisionReport, TtsReport};
use crate::policy::{self, Checkpoint, PolicyError, PolicyModel, CHECKPOINT_VERSION};
use crate::reward;
use crate::training::{self, generated_caption, Branch, BufferStats, Mode, NllPoint, Telemetry, TrainerConfig, TrainingError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const REPORT_VERSION: u32 = 1;
const STREAM_EVAL: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trainer: TrainerConfig,
    /// Trailing fraction of the corpus held out for evaluation.
    pub heldout_fraction: f64,
    /// Captions sampled per held-out image.
    pub eval_candidates: usize,
    pub pooling: Pooling,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerConfig::default(),
            heldout_fraction: 0.2,
            eval_candidates: 4,
            pooling: Pooling::Micro,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.trainer.validate()?;
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(ExperimentError::Config {
                field: "heldout_fraction",
                message: format!("must be in (0, 1), got {}", self.heldout_fraction),
            });
        }
        if self.eval_candidates < 1 {
            return Err(ExperimentError::Config {
                field: "eval_candidates",
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Splits off the last `ceil(n * fraction)` samples, keeping at least one
/// sample on each side when `n >= 2`.
pub fn split_heldout(samples: &[Sample], fraction: f64) -> (&[Sample], &[Sample]) {
    let n = samples.len();
    if n < 2 {
        return (samples, &[]);
    }
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1);
    samples.split_at(n - k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEvaluation {
    pub n_samples: usize,
    pub tts: Option<TtsReport>,
    pub precision: PrecisionReport,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub all: SubsetEvaluation,
    pub easy: SubsetEvaluation,
    pub hard: SubsetEvaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub corpus_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_heldout: usize,
    pub total_steps: usize,
    pub branch_histogram: BTreeMap<Branch, usize>,
    pub buffer: BufferStats,
    pub heldout_nll_initial: Option<f64>,
    pub heldout_nll_final: Option<f64>,
    pub evaluation: Evaluation,
}

pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub model: PolicyModel,
    pub telemetry: Telemetry,
}

/// Candidate captions sampled per held-out image, in sample order.
pub fn sample_candidates(
    model: &PolicyModel,
    samples: &[Sample],
    n: usize,
    eos: u32,
    seed: u64,
) -> Result<Vec<Vec<Caption>>, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_EVAL);
    samples
        .iter()
        .map(|s| {
            Ok(policy::sample_group(model, &s.features, n, &mut rng)?
                .iter()
                .map(|r| generated_caption(&r.tokens, eos))
                .collect())
        })
        .collect()
}

fn evaluate_subset(
    samples: &[&Sample],
    candidates: &[&Vec<Caption>],
    dict: &NameDictionary,
    cfg: &ExperimentConfig,
) -> SubsetEvaluation {
    let items = || samples.iter().zip(candidates).map(|(s, c)| (s.toys.as_slice(), c.as_slice()));
    let n_caps: usize = candidates.iter().map(|c| c.len()).sum();
    let reward_sum: f64 = items()
        .flat_map(|(toys, caps)| caps.iter().map(move |c| reward::reward(c, toys, &cfg.trainer.reward)))
        .sum();
    SubsetEvaluation {
        n_samples: samples.len(),
        tts: tts(items(), cfg.pooling).ok(),
        precision: PrecisionReport::evaluate(dict, items()),
        mean_reward: if n_caps > 0 { reward_sum / n_caps as f64 } else { 0.0 },
    }
}

/// Scores `candidates` (aligned with `samples`) overall and per hardness.
pub fn evaluate(
    dataset: &Dataset,
    samples: &[Sample],
    candidates: &[Vec<Caption>],
    cfg: &ExperimentConfig,
) -> Evaluation {
    let dict = NameDictionary::new(dataset.name_inventory());
    let subset = |keep: &dyn Fn(&Sample) -> bool| {
        let (s, c): (Vec<&Sample>, Vec<&Vec<Caption>>) =
            samples.iter().zip(candidates).filter(|(s, _)| keep(s)).unzip();
        evaluate_subset(&s, &c, &dict, cfg)
    };
    Evaluation {
        all: subset(&|_| true),
        easy: subset(&|s| s.hardness == Hardness::Easy),
        hard: subset(&|s| s.hardness == Hardness::Hard),
    }
}

/// Trains from a zero-initialized policy and evaluates on the held-out split.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentRun, ExperimentError> {
    run_experiment_from(cfg, dataset, PolicyModel::for_dataset(&dataset.header))
}

/// Like [`run_experiment`], starting from `model`.
pub fn run_experiment_from(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    model: PolicyModel,
) -> Result<ExperimentRun, ExperimentError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let h = &dataset.header;
    if (model.vocab_size, model.feature_dim, model.caption_length) != (h.vocab_size(), h.feature_dim, h.caption_length) {
        return Err(ExperimentError::Evaluation(format!(
            "initial policy shape (vocab {}, features {}, length {}) does not match the dataset (vocab {}, features {}, length {})",
            model.vocab_size, model.feature_dim, model.caption_length, h.vocab_size(), h.feature_dim, h.caption_length
        )));
    }
    let (train, heldout) = split_heldout(&dataset.samples, cfg.heldout_fraction);
    let (model, telemetry) = training::train(&cfg.trainer, model, &dataset.header, train, heldout)?;

    let candidates = sample_candidates(
        &model,
        heldout,
        cfg.eval_candidates,
        dataset.header.special.eos,
        cfg.trainer.seed,
    )?;
    let evaluation = evaluate(dataset, heldout, &candidates, cfg);
    if evaluation.all.tts.is_none() && !heldout.is_empty() {
        return Err(ExperimentError::Evaluation("held-out split has no annotated toys".into()));
    }

    let nll_of = |p: Option<&NllPoint>| p.map(|p| p.heldout_nll);
    let report = ExperimentReport {
        schema_version: REPORT_VERSION,
        corpus_hash: dataset.content_hash(),
        seed: cfg.trainer.seed,
        mode: cfg.trainer.mode,
        config: cfg.clone(),
        n_train: train.len(),
        n_heldout: heldout.len(),
        total_steps: telemetry.records.len(),
        branch_histogram: telemetry.branch_histogram(),
        buffer: telemetry.buffer.clone(),
        heldout_nll_initial: nll_of(telemetry.nll_trace.first()),
        heldout_nll_final: nll_of(telemetry.nll_trace.last()),
        evaluation,
    };
    Ok(ExperimentRun {
        report,
        model,
        telemetry,
    })
}

/// First line of `telemetry.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryHeader {
    pub schema_version: u32,
    pub corpus_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

pub const REPORT_FILE: &str = "report.json";
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("in-memory serialization");
    out.push(b'\n');
}

/// Writes report, telemetry and checkpoint into `dir` and returns their paths.
pub fn write_outputs(run: &ExperimentRun, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let report_path = dir.join(REPORT_FILE);
    let mut report = serde_json::to_vec_pretty(&run.report).expect("in-memory serialization");
    report.push(b'\n');
    std::fs::write(&report_path, report).map_err(io_err(&report_path))?;

    let tele_path = dir.join(TELEMETRY_FILE);
    let mut buf = Vec::new();
    json_line(
        &mut buf,
        &TelemetryHeader {
            schema_version: REPORT_VERSION,
            corpus_hash: run.report.corpus_hash.clone(),
            seed: run.report.seed,
            config: run.report.config.clone(),
        },
    );
    for r in &run.telemetry.records {
        json_line(&mut buf, r);
    }
    let mut f = std::fs::File::create(&tele_path).map_err(io_err(&tele_path))?;
    f.write_all(&buf).map_err(io_err(&tele_path))?;

    let ckpt_path = dir.join(CHECKPOINT_FILE);
    policy::save_checkpoint(
        &Checkpoint {
            schema_version: CHECKPOINT_VERSION,
            corpus_hash: run.report.corpus_hash.clone(),
            step: run.report.total_steps,
            model: run.model.clone(),
        },
        &ckpt_path,
    )?;
    Ok(vec![report_path, tele_path, ckpt_path])
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Evaluation(format!("{}: {e}", path.display())))
}
