use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relaug::pipeline::{self, PipelineConfig, Stage};
use relaug::Error;

/// Retrieval-based augmentation for relational tuple graphs.
///
/// Every stage reads and writes under --out-dir; run them in order or use
/// `all`. Flags override values from --config.
#[derive(Debug, Parser)]
#[command(name = "relaug", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the database, record table roles.
    Ingest,
    /// Build the schema graph and write nodes.tsv and edges_<type>.tsv.
    Graph,
    /// Tokenize tuples and write one random-walk document per entity tuple.
    Document,
    /// Build a BM25 index per entity table.
    Index,
    /// Retrieve similar same-table tuples and write atra_pairs.tsv.
    Atra,
    /// Retrieve cross-table shortcuts and write etra_edges.tsv.
    Etra,
    /// Add the retrieved shortcuts to the graph.
    AugmentGraph,
    /// Profile the graph before and/or after augmentation.
    Metrics {
        /// Profile the schema graph.
        #[arg(long)]
        before: bool,
        /// Profile the augmented graph.
        #[arg(long)]
        after: bool,
    },
    /// Collect the model-trainer inputs into export/.
    Export,
    /// Run every stage in order.
    All,
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Table manifest (manifest.json).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Directory of the table CSVs [default: the manifest's directory].
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Random-walk restart probability [default: 0.15].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Random-walk steps per tuple [default: 2000].
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// BM25 term-frequency saturation [default: 1.2].
    #[arg(long, global = true)]
    k1: Option<f64>,
    /// BM25 length normalization [default: 0.75].
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Minimum self-normalized score of a same-table pair [default: 0.7].
    #[arg(long, global = true)]
    theta_a: Option<f64>,
    /// Cross-table cut-off in standard deviations above the mean [default: 2.0].
    #[arg(long, global = true)]
    k_sigma: Option<f64>,
    /// Hits retrieved per query [default: 20].
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Fraction of tuples queried for same-table pairs [default: 1.0, or 0.1 above 100000 rows].
    #[arg(long, global = true)]
    sample_rate: Option<f64>,
    /// Seed for every random choice [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
}

impl Flags {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = &self.$flag {
                    cfg.$field = v.clone().into();
                }
            };
        }
        set!(manifest => manifest);
        set!(data_dir => data_dir);
        set!(out_dir => out_dir);
        set!(alpha => alpha);
        set!(steps => total_steps);
        set!(k1 => k1);
        set!(b => b);
        set!(theta_a => theta_a);
        set!(k_sigma => k_sigma);
        set!(top_k => top_k);
        set!(sample_rate => sample_rate);
        set!(seed => seed);
        set!(threads => threads);
        Ok(cfg)
    }
}

fn stage(command: &Command) -> Stage {
    match *command {
        Command::Ingest => Stage::Ingest,
        Command::Graph => Stage::Graph,
        Command::Document => Stage::Document,
        Command::Index => Stage::Index,
        Command::Atra => Stage::Atra,
        Command::Etra => Stage::Etra,
        Command::AugmentGraph => Stage::AugmentGraph,
        Command::Metrics { before, after } if !before && !after => Stage::Metrics { before: true, after: true },
        Command::Metrics { before, after } => Stage::Metrics { before, after },
        Command::Export => Stage::Export,
        Command::All => Stage::All,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stage = stage(&cli.command);
    let result = cli.flags.resolve().and_then(|cfg| pipeline::run(stage, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = serde_json::json!({
                "error": err.kind(),
                "stage": stage.name(),
                "message": err.to_string(),
            });
            eprintln!("{report}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
