mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use vergescope::Error;

#[derive(Parser)]
#[command(name = "vergescope", version, about = "Depth from binocular gaze vergence")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and write it as a dataset directory.
    Simulate(SimulateArgs),
    /// Clean gaze data, apply validity gates, write the per-trial GVA table.
    Preprocess(PreprocessArgs),
    /// Fit one calibration line per participant from a GVA table.
    Fit(FitArgs),
    /// Regression analyses over a GVA table.
    Analyze(AnalyzeArgs),
    /// Estimate depth per gaze sample read from standard input.
    Estimate(EstimateArgs),
    /// Render plots and text tables from an analysis JSON.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Cohort or experiment-design JSON; fields left out keep their defaults.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Base configuration the design file is applied to.
    #[arg(long, default_value = "reference")]
    pub preset: String,
    /// Overridden by VERGESCOPE_SEED when set.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Dataset directory with a `sessions/` subdirectory.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory (default: the dataset directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    pub confidence: f64,
    #[arg(long, default_value_t = 5000.0)]
    pub max_velocity: f64,
    #[arg(long, default_value_t = 2.5)]
    pub sd_k: f64,
    #[arg(long, default_value_t = 3)]
    pub min_pair_trials: usize,
    #[arg(long, default_value_t = 6)]
    pub min_env_pairs: usize,
    #[arg(long, default_value_t = 3)]
    pub required_envs: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Full3d)]
    pub vergence_mode: ModeArg,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Full3d,
    Horizontal,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub gva_table: PathBuf,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    FTest,
    Aic,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Raw,
    Normalized,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub gva_table: PathBuf,
    /// Participant models from `fit` (default: fitted from the table).
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Add the intercept-normalized analysis and environment offsets.
    #[arg(long)]
    pub normalized: bool,
    /// Add the switching-depth analysis.
    #[arg(long)]
    pub stability: bool,
    /// Add the XR / real log-ratio analysis; needs --subjective.
    #[arg(long, requires = "subjective")]
    pub logratio: bool,
    #[arg(long)]
    pub subjective: Option<PathBuf>,
    /// GVA values entering the log ratio.
    #[arg(long, value_enum, default_value_t = SourceArg::Raw)]
    pub log_ratio_source: SourceArg,
    #[arg(long, value_enum, default_value_t = CriterionArg::FTest)]
    pub criterion: CriterionArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EstimateArgs {
    /// A model JSON object, or an array of them with --participant.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub participant: Option<String>,
    /// Causal filters only, one output line per input line as it arrives.
    #[arg(long)]
    pub stream: bool,
    /// Invert a single GVA value (degrees) instead of reading samples.
    #[arg(long, conflicts_with = "stream")]
    pub gva: Option<f64>,
    #[arg(long, default_value_t = 0.75)]
    pub confidence: f64,
    #[arg(long, default_value_t = 5000.0)]
    pub max_velocity: f64,
    #[arg(long, default_value_t = 2.5)]
    pub sd_k: f64,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub analysis: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn error_json(e: &Error) -> String {
    serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}}).to_string()
}

fn run(cli: Cli) -> vergescope::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Fit(a) => commands::fit(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", serde_json::json!({"error": {"kind": "usage", "message": first}}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
