use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "crowdserve",
    version,
    about = "Spatial-keyword search and dispatch over a turk event log"
)]
struct Cli {
    /// Seed for every random choice; overrides seeds inside spec files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

/// Where the turk state comes from.
#[derive(Args, Debug, Clone)]
pub struct Source {
    /// JSON-lines event log to replay.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Snapshot to start from; with --log, only events after it are replayed.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub lat: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub lon: f64,
    /// Comma-separated keywords.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kw: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    /// Distance at which the spatial score reaches zero, meters.
    #[arg(long, default_value_t = 10_000.0)]
    pub dmax: f64,
    /// Seconds per recency decay step.
    #[arg(long, default_value_t = 3_600.0)]
    pub recency_unit: f64,
    /// Query time; defaults to the newest object timestamp.
    #[arg(long)]
    pub at: Option<i64>,
}

#[derive(Subcommand)]
enum Command {
    /// Replay an event log and print a summary.
    Load {
        log: PathBuf,
        /// Keep the valid prefix of a log whose tail is torn instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Write a snapshot of the replayed state.
    Snapshot {
        file: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Recommender dump to embed.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Exact top-k search; one JSON result per line.
    Query {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        query: QueryArgs,
        /// Print traversal counters to stderr.
        #[arg(long)]
        stats: bool,
    },
    /// Generate a workload and write its events to a new log.
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write generated queries as JSON lines.
        #[arg(long)]
        queries_out: Option<PathBuf>,
    },
    /// Run a workload against the index and write a JSON report.
    Bench {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the recommender on JSON-lines rating records.
    TrainCars {
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        factors: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        regularization: Option<f64>,
    },
    /// Rank turks for a user by predicted rating in the query's context.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        user: String,
        #[command(flatten)]
        query: QueryArgs,
        /// Candidate turks; defaults to every turk the model knows.
        #[arg(long, value_delimiter = ',')]
        pool: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long, default_value_t = 5)]
        m: usize,
    },
    /// Run a dispatch session driven by scripted responses.
    Dispatch {
        /// JSON lines: {"at": T, "turk_id": ID, "verdict": "ACCEPT|REFUSE|IGNORE"} or {"at": T} for a tick.
        #[arg(long)]
        script: PathBuf,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value_t = 3)]
        km: usize,
        #[arg(long, default_value_t = 0)]
        kr: usize,
        #[arg(long, default_value_t = 120)]
        timeout: i64,
        /// Recommender dump for the recommender slots.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Requesting user, for recommendations.
        #[arg(long, default_value = "")]
        user: String,
        #[arg(long, default_value = "session")]
        session_id: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
