mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tom_core::dataset::{DistractorMode, Visibility};
use tom_core::experiments::{ExperimentKind, Speed};
use tom_core::observer::Variant;
use tom_core::Error;

/// Theory-of-mind observer pipeline: gridworld actors, datasets, training
/// and the Beliefs vs NoBeliefs experiments.
#[derive(Debug, Parser)]
#[command(name = "tom", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory [default: $TOM_SYNERGY_OUT or ./tom-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Beliefs,
    Nobeliefs,
}

impl From<Arch> for Variant {
    fn from(a: Arch) -> Variant {
        match a {
            Arch::Beliefs => Variant::Beliefs,
            Arch::Nobeliefs => Variant::NoBeliefs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

/// Actor and sampling condition.
#[derive(Clone, Debug, Default, Args)]
pub struct ConditionArgs {
    /// Planner budget (max samples) of the actor.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Replay speed factor, e.g. 0.75.
    #[arg(long)]
    pub speed: Option<Speed>,
    /// random, ignored:K or aligned:K.
    #[arg(long)]
    pub distractor_mode: Option<DistractorMode>,
    /// any, visible or hidden.
    #[arg(long)]
    pub visibility: Option<Visibility>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training and test maps with an index manifest.
    GenMaps {
        /// Training maps.
        #[arg(long)]
        maps: Option<usize>,
        /// Test maps.
        #[arg(long)]
        test_maps: Option<usize>,
    },
    /// Run the actor on maps and write trajectories plus encoded samples.
    GenData {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Use the first N maps of the split [default: all].
        #[arg(long)]
        maps: Option<usize>,
        #[command(flatten)]
        condition: ConditionArgs,
    },
    /// Train observer models on the first N training maps.
    Train {
        /// Architecture [default: both].
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        #[arg(long)]
        map_count: Option<usize>,
        /// Replicate index, selecting the initialisation and batch order.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Score trained models on the test maps.
    Eval {
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        #[arg(long)]
        map_count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// Evaluate this checkpoint instead of the cached model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        condition: ConditionArgs,
    },
    /// Run one experiment and merge its rows into the results.
    Experiment {
        name: ExperimentKind,
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        /// Training map counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        map_count: Vec<usize>,
        /// Replicates per point [default: from config].
        #[arg(long)]
        replicates: Option<usize>,
        /// Keep only conditions matching these settings.
        #[command(flatten)]
        condition: ConditionArgs,
    },
    /// Summarise results and check them against the reference values.
    Report {
        /// Reference values file [default: bundled].
        #[arg(long)]
        expectations: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

/// A command found nothing to work on.
#[derive(Debug)]
pub struct Empty(pub String);

impl std::fmt::Display for Empty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Empty {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Empty>().is_some() {
        return 2;
    }
    let Some(core) = e.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        let missing = e
            .chain()
            .filter_map(|c| c.downcast_ref::<std::io::Error>())
            .any(|io| io.kind() == std::io::ErrorKind::NotFound);
        return if missing { 2 } else { 1 };
    };
    match core {
        Error::InvalidArgument(_) => 1,
        Error::EmptyDataset
        | Error::EmptyCondition(_)
        | Error::MissingCheckpoint(_)
        | Error::GenerationFailed { .. }
        | Error::InfeasiblePlacement { .. } => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Integrity(_)
        | Error::Checksum(_)
        | Error::Format { .. }
        | Error::Json(_)
        | Error::InvalidMap(_)
        | Error::Unreachable { .. } => 3,
        Error::Divergence { .. } | Error::ZeroMass | Error::ShapeMismatch(_) | Error::DegenerateBatch(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
