//! `rsrs`: generate synthetic toy-caption corpora, train the policy in SFT,
//! GRPO or RSRS mode, score candidate captions and check reward rankings.

use clap::{Parser, Subcommand};
use rsrs_cli::commands;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rsrs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(commands::GenArgs),
    /// Train and evaluate on the held-out split.
    Train(commands::TrainArgs),
    /// Score candidate captions against a corpus.
    Eval(commands::EvalArgs),
    /// Rank correlation between two rankers, or the planted-quality study.
    RankCorr(commands::RankCorrArgs),
    /// Summarize one or more training runs.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::cmd_gen(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::RankCorr(a) => commands::cmd_rank_corr(a),
        Command::Report(a) => commands::cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
