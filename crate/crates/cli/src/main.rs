//! `charad`: character-aware audio-description tooling over precomputed embeddings.
//!
//! Exit codes: 0 success, 1 unreadable or malformed input (including bad
//! flags and config), 2 well-formed input that violates a domain rule.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use charad_core::PipelineConfig;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "charad", version, about = "Character-aware audio-description pipeline tools")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Flat `key = value` config file; flags and CHARAD_* variables override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages (0 = one per core)
    #[arg(long, global = true, env = "CHARAD_THREADS", default_value_t = 0)]
    threads: usize,

    /// Write the resolved config to this file
    #[arg(long, global = true)]
    echo_config: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigFlags,
}

/// One flag per config key. Values are kept as text and parsed by the config loader.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Open-set distance threshold
    #[arg(long, global = true)]
    u: Option<String>,
    /// Redundancy similarity threshold
    #[arg(long, global = true)]
    theta: Option<String>,
    /// Character tokens kept after merging
    #[arg(long, global = true)]
    mu: Option<String>,
    /// Portrait clusters per character
    #[arg(long, global = true, alias = "k_clusters")]
    k_clusters: Option<String>,
    /// Context queue length per track
    #[arg(long, global = true, alias = "k_ctx")]
    k_ctx: Option<String>,
    /// Prompt queue length per track
    #[arg(long, global = true, alias = "k_prompt")]
    k_prompt: Option<String>,
    /// Weight of appearance against box overlap when tracking
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Minimum association score to extend a track
    #[arg(long, global = true, alias = "tau_assoc")]
    tau_assoc: Option<String>,
    /// Preceding ADs kept in the text prior
    #[arg(long, global = true, alias = "n_ads")]
    n_ads: Option<String>,
    /// Shortest dialogue-free gap kept as a clip, in seconds
    #[arg(long, global = true, alias = "min_gap_s")]
    min_gap_s: Option<String>,
    /// Seed for k-means initialisation
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Denominator guard in the bank objective
    #[arg(long, global = true)]
    epsilon: Option<String>,
    /// Keyframe stride in frames
    #[arg(long, global = true)]
    stride: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("u", &self.u),
            ("theta", &self.theta),
            ("mu", &self.mu),
            ("k_clusters", &self.k_clusters),
            ("k_ctx", &self.k_ctx),
            ("k_prompt", &self.k_prompt),
            ("alpha", &self.alpha),
            ("tau_assoc", &self.tau_assoc),
            ("n_ads", &self.n_ads),
            ("min_gap_s", &self.min_gap_s),
            ("seed", &self.seed),
            ("epsilon", &self.epsilon),
            ("stride", &self.stride),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a per-movie query bank from portrait embeddings
    BuildBank(commands::BuildBankArgs),
    /// Label face detections against a bank
    Recognize(commands::RecognizeArgs),
    /// Accuracy and unknown rate over a list of thresholds
    Sweep(commands::SweepArgs),
    /// Propagate anchor identities across keyframes
    Propagate(commands::PropagateArgs),
    /// Find dialogue-free clips from subtitles
    Segment(commands::SegmentArgs),
    /// Classify an AD by the names it mentions and the characters seen
    TagType(commands::TagTypeArgs),
    /// Assemble the instruction prompt and text prior
    Prompt(commands::PromptArgs),
    /// Compress character tokens by merging similar neighbours
    MergeTokens(commands::MergeTokensArgs),
    /// Redundancy scores for generated/reference pairs
    Score(commands::ScoreArgs),
    /// Run every stage over a movie manifest
    Pipeline(commands::PipelineArgs),
}

fn resolve_config(global: &GlobalArgs) -> charad_core::Result<PipelineConfig> {
    let base = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    base.with_env(std::env::vars())?
        .with_overrides(global.overrides.pairs())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<charad_core::Error>() {
        Some(e) if !e.is_input_error() => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(&cli.global)?;
    tracing::info!(config = %config.to_text().trim_end().replace('\n', "; "), "resolved config");
    if let Some(p) = &cli.global.echo_config {
        charad_core::io::write_string(p, &config.to_text())?;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .context("cannot start worker threads")?;

    match cli.command {
        Command::BuildBank(a) => commands::build_bank(&a, &config),
        Command::Recognize(a) => commands::recognize(&a, &config),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Propagate(a) => commands::propagate(&a, &config),
        Command::Segment(a) => commands::segment(&a, &config),
        Command::TagType(a) => commands::tag_type(&a),
        Command::Prompt(a) => commands::prompt(&a, &config),
        Command::MergeTokens(a) => commands::merge_tokens(&a, &config),
        Command::Score(a) => commands::score(&a, &config),
        Command::Pipeline(a) => commands::pipeline(&a, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("CHARAD_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
