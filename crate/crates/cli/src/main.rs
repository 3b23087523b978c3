mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mentor_eval::metrics::ReflectionDomain;

/// Multi-turn teacher evaluation: build datasets, run dialogues, score and analyze.
#[derive(Debug, Parser)]
#[command(name = "mentor-eval", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a free-form QA corpus into four-option questions.
    BuildDataset(BuildDatasetArgs),
    /// Run (or resume) the direct-answer pass and the dialogues.
    RunEval(RunEvalArgs),
    /// Ability scores of a run as CSV and JSON.
    Metrics(MetricsArgs),
    /// Simulate a synthetic population and check the gain decomposition.
    Simulate(SimulateArgs),
    /// Correlation, confusion, ablation and difficulty reports.
    Analyze(AnalyzeArgs),
    /// Leaderboard table of a run.
    Report(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Raw QA items, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "default")]
    pub run_id: String,
    /// Storage root; overrides `root` in the config.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Question file; overrides `dataset` in the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunEvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Teacher ids; replaces the configured teachers.
    #[arg(long = "teacher")]
    pub teachers: Vec<String>,
    /// Student ids; replaces the configured students.
    #[arg(long = "student")]
    pub students: Vec<String>,
    #[arg(long)]
    pub turns: Option<usize>,
    #[arg(long)]
    pub max_inflight: Option<usize>,
    /// Stop after this many units.
    #[arg(long)]
    pub max_units: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RaDomain {
    AllQuestions,
    PreviouslyCorrect,
}

impl From<RaDomain> for ReflectionDomain {
    fn from(d: RaDomain) -> Self {
        match d {
            RaDomain::AllQuestions => ReflectionDomain::AllQuestions,
            RaDomain::PreviouslyCorrect => ReflectionDomain::PreviouslyCorrect,
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Score whatever is complete instead of failing on pending units.
    #[arg(long)]
    pub allow_partial: bool,
    #[arg(long, value_enum, default_value = "all-questions")]
    pub ra_domain: RaDomain,
    /// Also write the main output here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation parameters, TOML or JSON.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_questions: Option<usize>,
    /// Directory for grids, transcripts and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Correlation,
    Confusion,
    LeaveOneOut,
    TurnSweep,
    Difficulty,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Question file, for the difficulty profile.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Grids file (`teacher_id`, `grid` per line) instead of a stored run.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    /// Our ranking as `model_id,score` CSV instead of CA from grids.
    #[arg(long)]
    pub ours: Option<PathBuf>,
    /// External ranking as `model_id,score` CSV.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Confusion matrices at this turn only.
    #[arg(long)]
    pub turn: Option<usize>,
    #[arg(long)]
    pub allow_partial: bool,
    /// CSV output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = error::CliError::config("InvalidArguments", e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return ExitCode::from(error::EXIT_CONFIG);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code)
        }
    }
}
