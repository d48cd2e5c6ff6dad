mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tracing_subscriber::EnvFilter;

/// Induce keyword rules for dialogue classification and arbitrate them
/// against a base predictor.
#[derive(Parser, Debug)]
#[command(name = "rulesmith", version)]
struct Cli {
    /// Raise log verbosity (-v info, -vv debug). RULESMITH_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a validation set by rephrasing every training sample.
    Rephrase(RephraseArgs),
    /// Search for rules per label, then filter them into a rule base.
    Induce(InduceArgs),
    /// Re-filter an existing rule base.
    Filter(FilterArgs),
    /// Label a dataset with the rule base and a predictor.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Render a saved evaluation report or summarize a rule base.
    Report(ReportArgs),
    /// Write a synthetic dataset and taxonomy with planted label cues.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct AgentArgs {
    /// `mock` or a chat-completions endpoint URL.
    #[arg(long)]
    agent: String,
    #[arg(long, default_value = "default")]
    agent_model: String,
    /// Reward noise amplitude of the mock agent.
    #[arg(long, default_value_t = rulesmith_core::agents::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Per-request timeout for a remote agent.
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    /// Remote requests allowed in flight.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Args, Debug)]
struct FilterFlags {
    #[arg(long, default_value_t = rulesmith_core::rulebase::DEFAULT_MIN_REWARD)]
    min_reward: f64,
    #[arg(long, default_value_t = rulesmith_core::rulebase::DEFAULT_MIN_SUPPORT)]
    min_support: usize,
    #[arg(long, default_value_t = rulesmith_core::rulebase::DEFAULT_MIN_PRECISION)]
    min_precision: f64,
    #[arg(long)]
    max_rules_per_label: Option<usize>,
}

#[derive(Args, Debug)]
struct RephraseArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long, default_value_t = 1)]
    per_sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InduceArgs {
    #[arg(long)]
    train: PathBuf,
    /// Validation set; a seeded 20% split of --train when absent.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    agent: AgentArgs,
    /// Search iterations per label.
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// Predicates requested per expansion.
    #[arg(long, default_value_t = 5)]
    proposals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    filter: FilterFlags,
    /// Write the unfiltered harvest.
    #[arg(long)]
    raw: bool,
    /// Line-delimited search trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    rules: PathBuf,
    /// Re-validate rules on this dataset.
    #[arg(long, requires = "labels")]
    val: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// `stub:<accuracy>` or a chat-completions endpoint URL.
    #[arg(long)]
    predictor: String,
    #[arg(long, default_value = "default")]
    predictor_model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = rulesmith_core::inference::DEFAULT_OVERRIDE_THRESHOLD)]
    override_threshold: f64,
    /// Predictor outages tolerated before the run fails.
    #[arg(long, default_value_t = 3)]
    failure_budget: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long)]
    out: PathBuf,
    /// Run report with override, fallback and abstention counts.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).multiple(true).args(["report", "rules"])))]
struct ReportArgs {
    /// Evaluation report written by `eval`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Rule base to summarize.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    intent_labels: usize,
    #[arg(long, default_value_t = 2)]
    image_labels: usize,
    #[arg(long, default_value_t = 1.0)]
    plant_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives `data.jsonl` and `labels.json`.
    #[arg(long)]
    out: PathBuf,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("RULESMITH_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Rephrase(a) => commands::rephrase(a),
        Command::Induce(a) => commands::induce(a),
        Command::Filter(a) => commands::filter(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let error = json!({
                "error": {
                    "kind": commands::error_kind(&err),
                    "message": err.to_string(),
                    "causes": err.chain().skip(1).map(ToString::to_string).collect::<Vec<_>>(),
                }
            });
            eprintln!("{error}");
            ExitCode::FAILURE
        }
    }
}
