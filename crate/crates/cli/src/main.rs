//! Command-line driver: synthetic data, captions, knowledge base, teacher
//! distillation, three-phase training and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rationale-distill", version, about)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its label registry.
    GenData(GenDataArgs),
    /// Caption lab anomalies for every record.
    Caption(CaptionArgs),
    /// Build the disease knowledge base with the teacher.
    BuildKb(BuildKbArgs),
    /// Add teacher rationales to a corpus.
    Distill(DistillArgs),
    /// Train one phase or all three.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print the metric report as JSON.
    Eval(EvalArgs),
    /// Caption, build the knowledge base, distill with the mock teacher,
    /// train all phases and evaluate.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Clone)]
struct CorpusArgs {
    /// Corpus JSONL.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Label registry JSON (defaults to the bundled registry).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Seed of the train/test split.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output corpus JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Output registry JSON (defaults to labels.json beside the corpus).
    #[arg(long)]
    registry_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CaptionArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output JSONL, one `{"id", "captions"}` object per record.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TeacherChoice {
    Mock,
    Remote,
}

#[derive(Args, Debug, Clone)]
struct TeacherArgs {
    #[arg(long, value_enum, default_value = "mock")]
    mode: TeacherChoice,
    /// Teacher calls in flight.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Attempts per prompt before giving up.
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    mock_seed: Option<u64>,
    /// Prompt exemplars JSON (defaults to the bundled set).
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildKbArgs {
    #[command(flatten)]
    teacher: TeacherArgs,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Reference documents JSON keyed by label (defaults to the bundled set).
    #[arg(long)]
    documents: Option<PathBuf>,
    #[arg(long, default_value_t = rationale::knowledge::DEFAULT_MAX_ROUNDS)]
    max_rounds: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    teacher: TeacherArgs,
    /// Captions JSONL from `caption` (computed when absent).
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Continue from an existing output file, skipping finished records.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PhaseChoice {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablate {
    Know,
    Reasoning,
    LabKnow,
}

#[derive(Args, Debug, Clone)]
struct TrainingArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    ablate: Option<Ablate>,
    /// Model and schedule seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Epochs for phases 1, 2 and 3, comma separated.
    #[arg(long, value_delimiter = ',')]
    epochs: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Knowledge base JSON.
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    phase: PhaseChoice,
    /// Checkpoint to continue from for phase 2 or 3 (defaults to the
    /// previous phase's checkpoint in the output directory).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run directory for checkpoints and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Phase1,
    Phase2,
    Phase3,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Encoder input to evaluate with (defaults to the checkpoint's phase).
    #[arg(long, value_enum)]
    mode: Option<EvalMode>,
    /// Seed recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threads for record-parallel generation.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    training: TrainingArgs,
    /// Use this raw corpus instead of generating one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Synthetic corpus size.
    #[arg(long)]
    n: Option<usize>,
    /// Synthetic corpus seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Teacher calls in flight.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp_secs()
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
