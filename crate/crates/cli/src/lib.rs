//! The `hgat` command line: train, eval, predict, gen-synth, inspect and
//! sweep. [`run`] is the whole program minus process exit, so tests can
//! drive it in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hgat_core::model::Task;
use hgat_core::train::Fold;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Exit};

#[derive(Debug, Parser)]
#[command(
    name = "hgat",
    version,
    about = "Hierarchical graph attention for news-article classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one split and write checkpoint, history and test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one fold.
    Eval(EvalArgs),
    /// Print `id<TAB>class<TAB>probability` for target nodes.
    Predict(PredictArgs),
    /// Write a synthetic graph and its manifest.
    GenSynth(GenSynthArgs),
    /// Summarize a graph directory or a checkpoint.
    Inspect(InspectArgs),
    /// Train over several training ratios and tasks and tabulate test metrics.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub fold: Fold,
    /// Also write `id<TAB>logits...` for the fold.
    #[arg(long)]
    pub dump_logits: Option<PathBuf>,
    /// Also write the metrics report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Target node ids.
    pub ids: Vec<String>,
    /// File with one id per line, read after the positional ids.
    #[arg(long)]
    pub ids_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML generator settings; flags take precedence over its keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Start from counts shaped like the PolitiFact news graph.
    #[arg(long)]
    pub politifact_shaped: bool,
    #[arg(long)]
    pub articles: Option<usize>,
    #[arg(long)]
    pub creators: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub max_subjects: Option<usize>,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub subject_signal: Option<f64>,
    #[arg(long)]
    pub creator_signal: Option<f64>,
    #[arg(long)]
    pub unlabeled: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Graph directory, schema file or checkpoint.
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    pub thetas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "binary,multiclass")]
    pub tasks: Vec<Task>,
    /// Also train the equal-weight schema fusion variant.
    #[arg(long)]
    pub with_ablation: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> Exit
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return Exit::Config;
            }
            let _ = write!(out, "{}", e.render());
            return Exit::Success;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(exit) => exit,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit()
        }
    }
}
