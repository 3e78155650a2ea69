//! Pipeline driver: train a random forest, turn shared-leaf frequencies into
//! tree-space distances, select class prototypes, evaluate them as a
//! nearest-prototype surrogate, sweep hyperparameters, and explain single
//! predictions by their nearest prototypes.
//!
//! Every stage writes files under `--out DIR` and appends a record to
//! `DIR/manifest.json`; later stages consume those files and refuse inputs
//! whose provenance digests do not line up. Exit codes: 0 success, 2 usage
//! error, 3 data error, 4 incompatible artifact.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad or conflicting arguments — exit code 2.
    Usage(String),
    /// Unreadable or unusable data — exit code 3.
    Data(String),
    /// An artifact from another run, version, or input — exit code 4.
    Incompatible(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Incompatible(msg) => {
                write!(f, "{msg}")
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Incompatible(_) => 4,
        }
    }
}

impl From<protoforest::Error> for CliError {
    fn from(e: protoforest::Error) -> Self {
        use protoforest::Error as E;
        match e {
            E::InvalidHyperparameter(_) | E::InvalidAlpha(_) | E::KOutOfRange { .. } => {
                CliError::Usage(e.to_string())
            }
            E::ModelFormat(_)
            | E::ModelVersion { .. }
            | E::MatrixFormat(_)
            | E::MatrixVersion { .. }
            | E::MatrixSizeMismatch { .. }
            | E::DimensionMismatch { .. } => CliError::Incompatible(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "protoforest",
    version,
    about = "Train random forests and explain them through class prototypes"
)]
struct Cli {
    /// JSON file supplying defaults for any long flag (explicit flags win).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every pipeline stage.
#[derive(Args, Debug, Clone)]
struct IoArgs {
    /// Training data: CSV with a header row and `.` decimal points.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,

    /// Name of the label column in the data CSV.
    #[arg(long, value_name = "COLUMN")]
    label: Option<String>,

    /// Directory for output artifacts and the run manifest.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for the stratified split and stochastic training [default: 42].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a random forest on the train split and write model.json.
    Train {
        #[command(flatten)]
        io: IoArgs,
        /// Number of trees [default: 1000].
        #[arg(long)]
        trees: Option<usize>,
        /// Features per split: `sqrt`, a count like `7`, or a fraction like
        /// `0.5` [default: sqrt].
        #[arg(long, value_name = "SPEC")]
        features: Option<String>,
    },

    /// Build (or reuse) the tree-space distance matrix for the train split.
    Distances {
        #[command(flatten)]
        io: IoArgs,
        /// Model file [default: OUT/model.json].
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Rebuild even when a cached matrix exists.
        #[arg(long)]
        no_cache: bool,
        /// Also export the matrix as CSV next to the binary file.
        #[arg(long)]
        csv: bool,
    },

    /// Select class prototypes on the train split and write prototypes.json.
    Select {
        #[command(flatten)]
        io: IoArgs,
        /// Model file [default: OUT/model.json].
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Selection algorithm: sm-a, sm-wa, or a-pete.
        #[arg(long, value_name = "NAME")]
        algorithm: Option<String>,
        /// Prototype count for sm-a/sm-wa.
        #[arg(long)]
        k: Option<usize>,
        /// Stopping threshold in (0,1) for a-pete [default: 0.05].
        #[arg(long)]
        alpha: Option<f64>,
        /// Cap on a-pete prototypes [default: train-split size].
        #[arg(long, value_name = "N")]
        max_prototypes: Option<usize>,
        /// Use this distance matrix instead of the cache.
        #[arg(long, value_name = "FILE")]
        matrix: Option<PathBuf>,
        /// Ignore any cached distance matrix.
        #[arg(long)]
        no_cache: bool,
    },

    /// Score the prototypes as a surrogate of the forest on one split part.
    Evaluate {
        #[command(flatten)]
        io: IoArgs,
        /// Model file [default: OUT/model.json].
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Prototype file [default: OUT/prototypes.json].
        #[arg(long, value_name = "FILE")]
        prototypes: Option<PathBuf>,
        /// Which part to score: train, valid, or test [default: test].
        #[arg(long, value_name = "PART")]
        split: Option<String>,
    },

    /// Grid-search feature counts and selection parameters; write sweep.csv.
    Sweep {
        #[command(flatten)]
        io: IoArgs,
        /// Number of trees per forest [default: 1000].
        #[arg(long)]
        trees: Option<usize>,
        /// Comma-separated feature grid [default: sqrt,7,0.33,0.5,0.7].
        #[arg(long, value_name = "SPECS")]
        feature_grid: Option<String>,
        /// k values: list and/or ranges, e.g. `1-20` [default: 1-20].
        #[arg(long, value_name = "GRID")]
        k_grid: Option<String>,
        /// Comma-separated alpha values [default: 0.05].
        #[arg(long, value_name = "LIST")]
        alphas: Option<String>,
        /// Comma-separated algorithms [default: sm-a,sm-wa,a-pete].
        #[arg(long, value_name = "LIST")]
        algorithms: Option<String>,
        /// Cap on a-pete prototypes [default: train-split size].
        #[arg(long, value_name = "N")]
        max_prototypes: Option<usize>,
    },

    /// Show the nearest prototypes for one dataset row.
    Explain {
        #[command(flatten)]
        io: IoArgs,
        /// Model file [default: OUT/model.json].
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Prototype file [default: OUT/prototypes.json].
        #[arg(long, value_name = "FILE")]
        prototypes: Option<PathBuf>,
        /// Row index (0-based) of the instance to explain.
        #[arg(long, value_name = "ROW")]
        instance: Option<usize>,
        /// Prototypes to list per class group [default: 3].
        #[arg(long)]
        m: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => config::load_config(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Train {
            io,
            trees,
            features,
        } => commands::train(io, trees, features, &file),
        Command::Distances {
            io,
            model,
            no_cache,
            csv,
        } => commands::distances(io, model, no_cache, csv, &file),
        Command::Select {
            io,
            model,
            algorithm,
            k,
            alpha,
            max_prototypes,
            matrix,
            no_cache,
        } => commands::select(
            io,
            model,
            algorithm,
            k,
            alpha,
            max_prototypes,
            matrix,
            no_cache,
            &file,
        ),
        Command::Evaluate {
            io,
            model,
            prototypes,
            split,
        } => commands::evaluate(io, model, prototypes, split, &file),
        Command::Sweep {
            io,
            trees,
            feature_grid,
            k_grid,
            alphas,
            algorithms,
            max_prototypes,
        } => commands::sweep(
            io,
            trees,
            feature_grid,
            k_grid,
            alphas,
            algorithms,
            max_prototypes,
            &file,
        ),
        Command::Explain {
            io,
            model,
            prototypes,
            instance,
            m,
        } => commands::explain(io, model, prototypes, instance, m, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
