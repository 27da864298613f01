//! The `pcmi` command-line pipeline. Each subcommand reads and writes the
//! JSONL formats of the core crate, so every step can be re-run on its own.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

pub use config::{BackendKind, PipelineConfig};
pub use error::CliError;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "pcmi", version, about = "PMI / PCMI response selection pipeline")]
pub struct Cli {
    /// Pipeline configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Backend for sampling and scoring.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract (history, fact, response) instances and split them by entity.
    BuildDataset(BuildDatasetArgs),
    /// Train the four n-gram oracle models.
    TrainOracle(TrainOracleArgs),
    /// Draw candidate responses per instance.
    Sample(SampleArgs),
    /// Score candidates under all four context specs.
    Score(ScoreArgs),
    /// Derive pcmi_h thresholds from the quartiles of validation scores.
    Calibrate(CalibrateArgs),
    /// Pick one candidate per pool.
    Select(SelectArgs),
    /// Build the comparison pairs of all three experiments.
    MakePairs(MakePairsArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Aggregate an annotation log into the results table.
    Aggregate(AggregateArgs),
    /// Results table plus attribution and distribution summaries.
    Report(ReportArgs),
    /// Write CSV and SVG data for the token, distribution and attribution plots.
    ExportPlotData(ExportPlotArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Conversations JSON (overrides paths.corpus).
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    /// Reading sets JSON (overrides paths.facts).
    #[arg(long)]
    pub reading_sets: Option<PathBuf>,
    /// Minimum TF-IDF cosine between a response and its fact.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory for train/validation/test.jsonl (overrides paths.output_dir).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainOracleArgs {
    /// Training instances [default: <output_dir>/train.jsonl].
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Model file [default: <output_dir>/oracle.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Oracle model file [default: <output_dir>/oracle.json].
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Replay store for the replay backend (overrides paths.replay_store).
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Instances to sample for [default: <output_dir>/test.jsonl].
    #[arg(long)]
    pub instances: Option<PathBuf>,
    #[arg(long)]
    pub num_candidates: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// [default: <output_dir>/samples.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Sampled candidates [default: <output_dir>/samples.jsonl].
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Also append every scored series to this replay store.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Drop per-token series from the output.
    #[arg(long)]
    pub no_series: bool,
    /// [default: <output_dir>/pools.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    AllCandidates,
    MaxPmiPerInstance,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Scored pools or score bundles (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
    /// Also write the thresholds here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// `LOW,HIGH` or `LOW,HIGH,FRACTION`.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Thresholds JSON written by `calibrate`.
    #[arg(long, conflicts_with = "thresholds")]
    pub thresholds_file: Option<PathBuf>,
    /// Fraction of the pool, by PMI rank, a swap target must fall in.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    MaxPmi,
    Fused,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// [default: <output_dir>/pools.jsonl]
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fused")]
    pub method: MethodArg,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// [default: <output_dir>/selections.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakePairsArgs {
    /// [default: <output_dir>/pools.jsonl]
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Minimum |Δpcmi_h| between the two sides of an EXP2 pair.
    #[arg(long)]
    pub exp2_delta_h_min: Option<f64>,
    /// [default: <output_dir>/pairs.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// [default: <output_dir>/pairs.jsonl]
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Directory for the assignment and annotation logs [default: <output_dir>/annotations].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Built web app to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origin; repeatable. Any origin when absent.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Annotation log (JSONL).
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Scored pools, for attribution and distribution summaries.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPlotArgs {
    /// [default: <output_dir>/pools.jsonl]
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Instance for the token plot [default: first pool].
    #[arg(long)]
    pub instance: Option<String>,
    /// With --annotations, adds the span attribution table.
    #[arg(long, requires = "annotations")]
    pub pairs: Option<PathBuf>,
    #[arg(long, requires = "pairs")]
    pub annotations: Option<PathBuf>,
    /// [default: <output_dir>/plots]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Loads the config, applies global overrides and runs the subcommand.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(backend) = cli.backend {
        config.backend = backend;
    }
    config.validate()?;
    commands::dispatch(&config, cli.command)
}

/// JSON-line logs on stderr; `RUST_LOG` sets the filter (default `info`).
pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .target(env_logger::Target::Stderr)
        .init();
}
