use crate::config::{CorpusOpts, FileConfig, RewardOpts, TrainOpts};
use crate::error::CliError;
use crate::published;
use clap::Args;
use rsrs_core::corpus::{generate_corpus, read_dataset, write_dataset, Dataset};
use rsrs_core::experiment::{self, ExperimentReport, ExperimentRun, SubsetEvaluation};
use rsrs_core::metrics::{tts, Caption, NameDictionary, Pooling, PrecisionReport, TtsReport};
use rsrs_core::policy::{load_checkpoint, PolicyModel};
use rsrs_core::reward::{reward, RewardConfig};
use rsrs_core::training::{generated_caption, Branch, Telemetry};
use rsrs_core::validation::{self, CorrelationReport, StudyConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const OUTPUT_VERSION: u32 = 1;
pub const PLOT_FILE: &str = "plot.csv";
pub const CONFIG_FILE: &str = "config.toml";
const LOCK_FILE: &str = ".rsrs.lock";

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    bytes.push(b'\n');
    write_file(path, bytes)
}

/// Exclusive claim on an output directory for the lifetime of a run.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                CliError::Data(format!(
                    "cannot lock output directory {} ({e}); another run may be using it, remove {} if stale",
                    dir.display(),
                    path.display()
                ))
            })?;
        Ok(Self(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required {flag} (flag or config key)")))
}

// ---------------------------------------------------------------- gen

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output dataset (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusOpts,
}

pub fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let cfg = args.corpus.over(file.corpus).resolve(args.seed.or(file.seed));
    cfg.validate()?;
    eprint!("# effective config\n{}", FileConfig::effective_corpus(&cfg).to_toml());
    let ds = generate_corpus(&cfg)?;
    write_dataset(&ds, &args.out)?;
    println!(
        "wrote {} samples to {} (corpus hash {})",
        ds.len(),
        args.out.display(),
        ds.content_hash()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset produced by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial policy; refused unless it was trained on the same corpus.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub reward: RewardOpts,
}

#[derive(Serialize)]
struct PlotRow {
    step: usize,
    branch: &'static str,
    mean_group_reward: Option<f64>,
    buffer_size: usize,
    grad_norm: f64,
    loss: f64,
}

pub fn plot_csv(telemetry: &Telemetry) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &telemetry.records {
        w.serialize(PlotRow {
            step: r.step,
            branch: r.branch.as_str(),
            mean_group_reward: r.mean_reward(),
            buffer_size: r.buffer_size,
            grad_norm: r.grad_norm,
            loss: r.loss,
        })
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let reward = args.reward.over(file.reward).resolve();
    let cfg = args.train.over(file.train).resolve(args.seed.or(file.seed), reward);
    let data = required(args.data.or(file.data), "--data")?;
    let out_dir = required(args.out_dir.or(file.out_dir), "--out-dir")?;
    let checkpoint = args.checkpoint.or(file.checkpoint);
    cfg.validate()?;
    let effective = FileConfig::effective_train(&cfg, &data, checkpoint.as_deref()).to_toml();
    eprint!("# effective config\n{effective}");

    let ds = read_dataset(&data)?;
    let _lock = RunLock::acquire(&out_dir)?;
    let model = match &checkpoint {
        Some(p) => load_checkpoint(p, &ds.content_hash())?.model,
        None => PolicyModel::for_dataset(&ds.header),
    };
    let run = experiment::run_experiment_from(&cfg, &ds, model)?;
    experiment::write_outputs(&run, &out_dir)?;
    write_file(&out_dir.join(PLOT_FILE), plot_csv(&run.telemetry))?;
    write_file(&out_dir.join(CONFIG_FILE), effective)?;
    print!("{}", render_run(&run));
    Ok(())
}

fn render_subset(name: &str, s: &SubsetEvaluation) -> String {
    let mut out = format!("[{name}] samples {}", s.n_samples);
    if s.n_samples == 0 {
        return out + "\n";
    }
    let precision = s
        .precision
        .precision
        .map_or("absent".into(), |p| format!("{:.2}%", 100.0 * p));
    let _ = writeln!(
        out,
        ", mean reward {:.3}, avg toy count {:.3}, precision {precision}",
        s.mean_reward, s.precision.mean_count
    );
    if let Some(t) = &s.tts {
        let _ = writeln!(out, "{t}");
    }
    out
}

pub fn render_report(r: &ExperimentReport) -> String {
    let mut out = format!(
        "mode {} | seed {} | corpus {} | train {} / held-out {} | steps {}\n",
        r.mode.as_str(),
        r.seed,
        &r.corpus_hash[..12.min(r.corpus_hash.len())],
        r.n_train,
        r.n_heldout,
        r.total_steps
    );
    let hist: Vec<String> = Branch::ALL
        .iter()
        .map(|b| format!("{} {}", b.as_str(), r.branch_histogram.get(b).copied().unwrap_or(0)))
        .collect();
    let _ = writeln!(out, "branches: {}", hist.join(", "));
    let _ = writeln!(
        out,
        "buffer: enqueued {}, dequeued {}, final {}, high-water {}",
        r.buffer.enqueued, r.buffer.dequeued, r.buffer.final_size, r.buffer.high_water
    );
    if let (Some(a), Some(b)) = (r.heldout_nll_initial, r.heldout_nll_final) {
        let _ = writeln!(out, "held-out NLL: {a:.3} -> {b:.3}");
    }
    out.push_str(&render_subset("all", &r.evaluation.all));
    out.push_str(&render_subset("easy", &r.evaluation.easy));
    out.push_str(&render_subset("hard", &r.evaluation.hard));
    out
}

fn render_run(run: &ExperimentRun) -> String {
    render_report(&run.report)
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSONL lines `{"sample_id": ..., "captions": [...]}`; a caption is a
    /// token array or a string.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, value_parser = crate::config::parse_enum::<Pooling>)]
    pub pooling: Option<Pooling>,
    /// Also score every candidate with the reward.
    #[arg(long)]
    pub reward: bool,
    /// Append the published reference values.
    #[arg(long)]
    pub with_paper_refs: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub reward_opts: RewardOpts,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateLine {
    sample_id: String,
    captions: Vec<Caption>,
}

#[derive(Debug, Serialize)]
struct SampleRewards {
    sample_id: String,
    rewards: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    schema_version: u32,
    corpus_hash: String,
    pooling: Pooling,
    reward_config: RewardConfig,
    n_samples: usize,
    tts: TtsReport,
    precision: PrecisionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rewards: Option<Vec<SampleRewards>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    published: Option<serde_json::Value>,
}

fn read_candidates(path: &Path, ds: &Dataset) -> Result<Vec<CandidateLine>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let c: CandidateLine = serde_json::from_str(l)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        lines.push(c);
    }
    let unknown: Vec<&str> = lines
        .iter()
        .filter(|c| ds.find(&c.sample_id).is_none())
        .map(|c| c.sample_id.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Data(format!("unknown sample_id(s) in candidates: {}", unknown.join(", "))));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = lines.iter().find(|c| !seen.insert(c.sample_id.as_str())) {
        return Err(CliError::Data(format!("sample_id {} listed twice in candidates", dup.sample_id)));
    }
    Ok(lines)
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let reward_cfg = args.reward_opts.over(file.reward).resolve();
    reward_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let pooling = args.pooling.or(file.train.pooling).unwrap_or_default();
    let ds = read_dataset(&args.data)?;
    let lines = read_candidates(&args.candidates, &ds)?;
    let eos = ds.header.special.eos;
    let prepared: Vec<(&[rsrs_core::corpus::ToyAnnotation], Vec<Caption>)> = lines
        .iter()
        .map(|c| {
            let sample = ds.find(&c.sample_id).expect("checked above");
            let caps = c
                .captions
                .iter()
                .map(|cap| match cap {
                    Caption::Tokens(t) => generated_caption(t, eos),
                    Caption::Text(_) => cap.clone(),
                })
                .collect();
            (sample.toys.as_slice(), caps)
        })
        .collect();
    let items = || prepared.iter().map(|(t, c)| (*t, c.as_slice()));
    let report_tts = tts(items(), pooling).map_err(|e| CliError::Data(e.to_string()))?;
    let precision = PrecisionReport::evaluate(&NameDictionary::new(ds.name_inventory()), items());
    let rewards = args.reward.then(|| {
        lines
            .iter()
            .zip(&prepared)
            .map(|(l, (toys, caps))| SampleRewards {
                sample_id: l.sample_id.clone(),
                rewards: caps.iter().map(|c| reward(c, toys, &reward_cfg)).collect(),
            })
            .collect::<Vec<_>>()
    });
    let mean_reward = rewards.as_ref().map(|rs| {
        let all: Vec<f64> = rs.iter().flat_map(|r| r.rewards.iter().copied()).collect();
        if all.is_empty() {
            0.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    });

    println!("{report_tts}");
    println!(
        "avg toy count {:.3}, precision {}",
        precision.mean_count,
        precision.precision.map_or("absent".into(), |p| format!("{:.2}%", 100.0 * p))
    );
    if let Some(m) = mean_reward {
        println!("mean reward {m:.4}");
    }
    if args.with_paper_refs {
        print!("{}", published::render());
    }
    let report = EvalReport {
        schema_version: OUTPUT_VERSION,
        corpus_hash: ds.content_hash(),
        pooling,
        reward_config: reward_cfg,
        n_samples: lines.len(),
        tts: report_tts,
        precision,
        mean_reward,
        rewards,
        published: args.with_paper_refs.then(published::to_json),
    };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- rank-corr

#[derive(Args, Debug)]
pub struct RankCorrArgs {
    /// Two ranking files (JSONL `{"image_id": ..., "ranking": [...]}`).
    #[arg(num_args = 2, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub files: Vec<PathBuf>,
    /// Run the planted-quality study instead of reading files.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    #[arg(long, default_value_t = 5)]
    pub captions: usize,
    /// Probability that a simulated annotator score is random.
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Directory for the synthetic study's ranking files and report.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Write the JSON correlation report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub reward_opts: RewardOpts,
}

fn render_correlation(r: &CorrelationReport) -> String {
    let f = |x: Option<f64>| x.map_or("undefined".into(), |v| format!("{v:.4}"));
    format!(
        "images {} (undefined {}) | mean tau {} | mean rho {}\n",
        r.n_images,
        r.n_undefined,
        f(r.mean_tau),
        f(r.mean_rho)
    )
}

#[derive(Serialize)]
struct FileCorrelation<'a> {
    schema_version: u32,
    files: &'a [PathBuf],
    correlation: &'a CorrelationReport,
}

pub fn cmd_rank_corr(args: RankCorrArgs) -> Result<(), CliError> {
    if args.synthetic {
        let study = validation::planted_study(&StudyConfig {
            n_images: args.images,
            n_captions: args.captions,
            noise: args.noise,
            seed: args.seed,
            reward: args.reward_opts.resolve(),
        })?;
        print!(
            "planted study: seed {}, noise {}, {} captions per image\n{}",
            args.seed,
            args.noise,
            args.captions,
            render_correlation(&study.correlation)
        );
        let (tau, rho) = published::RANK_CORRELATION;
        println!("reference tau {tau} / rho {rho} ({})", published::LABEL);
        if let Some(dir) = &args.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            validation::write_rankings(&study.annotator, &dir.join("annotator.jsonl"))?;
            validation::write_rankings(&study.reward_ranker, &dir.join("reward.jsonl"))?;
            write_json(&dir.join("study.json"), &study)?;
        }
        if let Some(out) = &args.out {
            write_json(out, &serde_json::json!({"schema_version": OUTPUT_VERSION, "config": study.config, "correlation": study.correlation}))?;
        }
        return Ok(());
    }
    let a = validation::read_rankings(&args.files[0])?;
    let b = validation::read_rankings(&args.files[1])?;
    let report = validation::correlate(&a, &b)?;
    print!("{}", render_correlation(&report));
    if let Some(out) = &args.out {
        write_json(
            out,
            &FileCorrelation {
                schema_version: OUTPUT_VERSION,
                files: &args.files,
                correlation: &report,
            },
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directories of `train` runs.
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub with_paper_refs: bool,
    /// Write a CSV comparison of the runs here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct SummaryRow {
    run: String,
    mode: &'static str,
    seed: u64,
    tts: Option<f64>,
    tts_fl: Option<f64>,
    tts_fm: Option<f64>,
    tts_fh: Option<f64>,
    tts_bl: Option<f64>,
    tts_bm: Option<f64>,
    tts_bh: Option<f64>,
    hard_tts_fh: Option<f64>,
    avg_toy_count: f64,
    precision: Option<f64>,
    sft_from_buffer: usize,
}

pub fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut hashes = BTreeMap::new();
    for dir in &args.run_dirs {
        let r = experiment::read_report(&dir.join(experiment::REPORT_FILE))?;
        println!("== {}", dir.display());
        print!("{}", render_report(&r));
        hashes.insert(r.corpus_hash.clone(), dir.display().to_string());
        let all = r.evaluation.all.tts.as_ref();
        let cell = |f: fn(&TtsReport) -> Option<f64>| all.and_then(f);
        rows.push(SummaryRow {
            run: dir.display().to_string(),
            mode: r.mode.as_str(),
            seed: r.seed,
            tts: all.map(|t| t.tts_aggregate),
            tts_fl: cell(|t| t.tts_fl),
            tts_fm: cell(|t| t.tts_fm),
            tts_fh: cell(|t| t.tts_fh),
            tts_bl: cell(|t| t.tts_bl),
            tts_bm: cell(|t| t.tts_bm),
            tts_bh: cell(|t| t.tts_bh),
            hard_tts_fh: r.evaluation.hard.tts.as_ref().and_then(|t| t.tts_fh),
            avg_toy_count: r.evaluation.all.precision.mean_count,
            precision: r.evaluation.all.precision.precision,
            sft_from_buffer: r.branch_histogram.get(&Branch::SftFromBuffer).copied().unwrap_or(0),
        });
    }
    if hashes.len() > 1 {
        eprintln!("warning: runs were trained on {} different corpora", hashes.len());
    }
    if args.with_paper_refs {
        print!("{}", published::render());
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &rows {
            w.serialize(row).expect("in-memory csv");
        }
        write_file(path, w.into_inner().expect("in-memory csv"))?;
    }
    Ok(())
}
