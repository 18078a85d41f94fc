use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn rsrs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsrs"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn rsrs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = rsrs(args, cwd);
    assert!(
        out.status.success(),
        "rsrs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], cwd: &Path, code: i32) -> String {
    let out = rsrs(args, cwd);
    assert_eq!(out.status.code(), Some(code), "rsrs {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn small_corpus(dir: &Path, name: &str, seed: &str, hard: &str) -> PathBuf {
    ok(&["gen", "--out", name, "--seed", seed, "--n", "120", "--hard-fraction", hard], dir);
    dir.join(name)
}

const SHORT: [&str; 4] = ["--warmup-steps", "40", "--hybrid-steps", "40"];

#[test]
fn gen_is_deterministic_and_echoes_config() {
    let dir = TempDir::new().unwrap();
    let out = rsrs(&["gen", "--seed", "7", "--n", "100", "--out", "a.jsonl"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_samples = 100"));
    ok(&["gen", "--seed", "7", "--n", "100", "--out", "b.jsonl"], dir.path());
    assert_eq!(read(dir.path().join("a.jsonl")), read(dir.path().join("b.jsonl")));
    ok(&["gen", "--seed", "8", "--n", "100", "--out", "c.jsonl"], dir.path());
    assert_ne!(read(dir.path().join("a.jsonl")), read(dir.path().join("c.jsonl")));
}

#[test]
fn gen_without_out_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    fails(&["gen", "--seed", "7"], dir.path(), 1);
}

#[test]
fn gen_names_the_invalid_field() {
    let dir = TempDir::new().unwrap();
    let err = fails(&["gen", "--hard-fraction", "1.5", "--out", "d.jsonl"], dir.path(), 1);
    assert!(err.contains("hard_fraction"), "{err}");
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 3\nn_samples = 50\nhard_fraction = 0.5\n").unwrap();
    let out = rsrs(&["gen", "--config", "c.toml", "--n", "60", "--out", "d.jsonl"], dir.path());
    assert!(out.status.success());
    let echo = String::from_utf8_lossy(&out.stderr);
    assert!(echo.contains("n_samples = 60") && echo.contains("hard_fraction = 0.5") && echo.contains("seed = 3"));

    std::fs::write(dir.path().join("bad.toml"), "n_samples = 50\nlearning_rate = 1\n").unwrap();
    let err = fails(&["gen", "--config", "bad.toml", "--out", "e.jsonl"], dir.path(), 1);
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn train_is_reproducible_and_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "d.jsonl", "4", "0.3");
    for run in ["r1", "r2"] {
        let mut args = vec!["train", "--data", "d.jsonl", "--out-dir", run, "--seed", "5"];
        args.extend(SHORT);
        let table = ok(&args, dir.path());
        assert!(table.contains("TTS-FH") && table.contains("branches:"), "{table}");
    }
    for f in ["report.json", "telemetry.jsonl", "checkpoint.json", "plot.csv", "config.toml"] {
        assert_eq!(read(dir.path().join("r1").join(f)), read(dir.path().join("r2").join(f)), "{f} differs");
    }
    let plot = String::from_utf8(read(dir.path().join("r1/plot.csv"))).unwrap();
    assert!(plot.starts_with("step,branch,mean_group_reward,buffer_size,grad_norm,loss\n"));
    assert_eq!(plot.lines().count(), 81);
    assert!(!dir.path().join("r1/.rsrs.lock").exists());

    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("r1/report.json"))).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["seed"], 5);
    assert_eq!(report["config"]["trainer"]["warmup_steps"], 40);
    assert_eq!(report["corpus_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn rsrs_on_hard_heavy_corpus_uses_the_buffer() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "d.jsonl", "2", "0.9");
    std::fs::write(
        dir.path().join("run.toml"),
        "data = \"d.jsonl\"\nout_dir = \"run\"\nmode = \"rsrs\"\nwarmup_steps = 100\nhybrid_steps = 200\n",
    )
    .unwrap();
    ok(&["train", "--config", "run.toml"], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("run/report.json"))).unwrap();
    assert!(report["branch_histogram"]["sft_from_buffer"].as_u64().unwrap() > 0, "{}", report["branch_histogram"]);
}

#[test]
fn train_on_empty_dataset_is_an_error() {
    let dir = TempDir::new().unwrap();
    let full = small_corpus(dir.path(), "d.jsonl", "1", "0.3");
    let header = String::from_utf8(read(full)).unwrap().lines().next().unwrap().to_string();
    std::fs::write(dir.path().join("empty.jsonl"), header + "\n").unwrap();
    let err = fails(&["train", "--mode", "sft", "--data", "empty.jsonl", "--out-dir", "run"], dir.path(), 2);
    assert!(err.contains("empty"), "{err}");
}

#[test]
fn train_refuses_checkpoint_from_another_corpus() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "a.jsonl", "1", "0.3");
    small_corpus(dir.path(), "b.jsonl", "2", "0.3");
    let mut args = vec!["train", "--data", "a.jsonl", "--out-dir", "ra"];
    args.extend(SHORT);
    ok(&args, dir.path());

    let mut resume = vec!["train", "--data", "a.jsonl", "--out-dir", "rb", "--checkpoint", "ra/checkpoint.json"];
    resume.extend(SHORT);
    ok(&resume, dir.path());

    let mut other = vec!["train", "--data", "b.jsonl", "--out-dir", "rc", "--checkpoint", "ra/checkpoint.json"];
    other.extend(SHORT);
    let err = fails(&other, dir.path(), 2);
    assert!(err.contains("hash"), "{err}");
    assert!(!dir.path().join("rc/report.json").exists());
}

#[test]
fn concurrent_run_in_same_directory_is_refused() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "d.jsonl", "1", "0.3");
    std::fs::create_dir(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/.rsrs.lock"), "").unwrap();
    let mut args = vec!["train", "--data", "d.jsonl", "--out-dir", "run"];
    args.extend(SHORT);
    let err = fails(&args, dir.path(), 2);
    assert!(err.contains("lock"), "{err}");
}

#[test]
fn invalid_training_value_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "d.jsonl", "1", "0.3");
    let err = fails(&["train", "--data", "d.jsonl", "--out-dir", "run", "--group-size", "1"], dir.path(), 1);
    assert!(err.contains("group_size"), "{err}");
    fails(&["train", "--data", "d.jsonl", "--out-dir", "run", "--mode", "ppo"], dir.path(), 1);
}

/// Writes one candidates line per sample, built from the sample itself.
fn candidates(data: &Path, out: &Path, f: impl Fn(&serde_json::Value) -> serde_json::Value) {
    let text = String::from_utf8(read(data)).unwrap();
    let mut lines = String::new();
    for l in text.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        if v.get("sample_id").is_some() {
            let line = serde_json::json!({"sample_id": v["sample_id"], "captions": f(&v)});
            lines.push_str(&line.to_string());
            lines.push('\n');
        }
    }
    std::fs::write(out, lines).unwrap();
}

/// Ground truths as candidates on the reference corpus: the matcher's
/// ceiling, pinned from the first run. Every foreground toy is named at its
/// most specific level, so only TTS-FH reaches 1.
#[test]
fn ground_truth_candidates_reach_the_matcher_ceiling() {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "--seed", "7", "--out", "ref.jsonl"], dir.path());
    candidates(&dir.path().join("ref.jsonl"), &dir.path().join("gt.jsonl"), |v| {
        serde_json::json!([v["ground_truth"]])
    });
    ok(&["eval", "--data", "ref.jsonl", "--candidates", "gt.jsonl", "--out", "ev.json"], dir.path());
    let ev: serde_json::Value = serde_json::from_slice(&read(dir.path().join("ev.json"))).unwrap();
    let cells: Vec<(u64, u64)> = ev["tts"]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["matched"].as_u64().unwrap(), c["total"].as_u64().unwrap()))
        .collect();
    assert_eq!(
        cells,
        vec![(836, 2748), (775, 2748), (2748, 2748), (284, 2247), (282, 2247), (243, 2247)]
    );
    assert_eq!(ev["precision"]["precision"], 1.0);
    assert_eq!(ev["n_samples"], 2000);
}

#[test]
fn empty_candidate_lists_score_zero_everywhere() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(dir.path(), "d.jsonl", "3", "0.3");
    candidates(&data, &dir.path().join("none.jsonl"), |_| serde_json::json!([]));
    ok(&["eval", "--data", "d.jsonl", "--candidates", "none.jsonl", "--reward", "--out", "ev.json"], dir.path());
    let ev: serde_json::Value = serde_json::from_slice(&read(dir.path().join("ev.json"))).unwrap();
    for c in ev["tts"]["cells"].as_array().unwrap() {
        assert_eq!(c["matched"], 0);
        assert!(c["total"].as_u64().unwrap() > 0);
        assert_eq!(c["rate"], 0.0);
    }
    assert_eq!(ev["tts"]["tts_aggregate"], 0.0);
    assert_eq!(ev["mean_reward"], 0.0);
}

#[test]
fn eval_lists_unknown_sample_ids() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "d.jsonl", "3", "0.3");
    std::fs::write(
        dir.path().join("c.jsonl"),
        "{\"sample_id\":\"s00000\",\"captions\":[\"a toy\"]}\n{\"sample_id\":\"ghost1\",\"captions\":[]}\n{\"sample_id\":\"ghost2\",\"captions\":[[1,2]]}\n",
    )
    .unwrap();
    let err = fails(&["eval", "--data", "d.jsonl", "--candidates", "c.jsonl"], dir.path(), 2);
    assert!(err.contains("ghost1") && err.contains("ghost2") && !err.contains("s00000"), "{err}");
}

#[test]
fn eval_appends_labelled_reference_values() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(dir.path(), "d.jsonl", "3", "0.3");
    candidates(&data, &dir.path().join("gt.jsonl"), |v| serde_json::json!([v["ground_truth"]]));
    let plain = ok(&["eval", "--data", "d.jsonl", "--candidates", "gt.jsonl"], dir.path());
    assert!(!plain.contains("51.06"));
    let with = ok(
        &["eval", "--data", "d.jsonl", "--candidates", "gt.jsonl", "--with-paper-refs", "--out", "ev.json"],
        dir.path(),
    );
    assert!(with.contains("51.06") && with.contains("published, not reproduced"), "{with}");
    let ev: serde_json::Value = serde_json::from_slice(&read(dir.path().join("ev.json"))).unwrap();
    assert_eq!(ev["published"]["label"], "published, not reproduced");
}

#[test]
fn rank_corr_of_a_file_with_itself_is_one() {
    let dir = TempDir::new().unwrap();
    ok(&["rank-corr", "--synthetic", "--images", "20", "--out-dir", "study"], dir.path());
    let out = ok(&["rank-corr", "study/annotator.jsonl", "study/annotator.jsonl", "--out", "c.json"], dir.path());
    assert!(out.contains("mean tau 1.0000 | mean rho 1.0000"), "{out}");
    let c: serde_json::Value = serde_json::from_slice(&read(dir.path().join("c.json"))).unwrap();
    assert_eq!(c["correlation"]["mean_tau"], 1.0);
}

#[test]
fn rank_corr_rejects_coverage_mismatch() {
    let dir = TempDir::new().unwrap();
    ok(&["rank-corr", "--synthetic", "--images", "5", "--out-dir", "study"], dir.path());
    let full = String::from_utf8(read(dir.path().join("study/reward.jsonl"))).unwrap();
    let partial: String = full.lines().take(3).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.path().join("partial.jsonl"), partial).unwrap();
    let err = fails(&["rank-corr", "study/annotator.jsonl", "partial.jsonl"], dir.path(), 2);
    assert!(err.contains("img0003") && err.contains("img0004"), "{err}");
}

#[test]
fn synthetic_study_reports_its_seed() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["rank-corr", "--synthetic", "--seed", "11", "--out", "s.json"], dir.path());
    assert!(out.contains("seed 11") && out.contains("mean tau"), "{out}");
    let s: serde_json::Value = serde_json::from_slice(&read(dir.path().join("s.json"))).unwrap();
    assert_eq!(s["config"]["seed"], 11);
    let tau = s["correlation"]["mean_tau"].as_f64().unwrap();
    assert!(tau > 0.0 && tau < 1.0, "{tau}");
}

#[test]
fn report_summarizes_runs() {
    let dir = TempDir::new().unwrap();
    small_corpus(dir.path(), "d.jsonl", "1", "0.3");
    for mode in ["sft", "rsrs"] {
        let mut args = vec!["train", "--data", "d.jsonl", "--out-dir", mode, "--mode", mode];
        args.extend(SHORT);
        ok(&args, dir.path());
    }
    let out = ok(&["report", "sft", "rsrs", "--csv", "sum.csv"], dir.path());
    assert!(out.contains("mode sft") && out.contains("mode rsrs"));
    let csv = String::from_utf8(read(dir.path().join("sum.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("sft,sft,"));
    fails(&["report", "missing"], dir.path(), 2);
}
