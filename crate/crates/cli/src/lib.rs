//! The `segprobe` command line: config loading, stage orchestration and
//! the bundled fixture corpus.

pub mod config;
pub mod error;
pub mod fixture;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Loaded, RunConfig};
pub use error::CliError;
pub use stages::{run_stage, Ctx, Outcome, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "segprobe",
    version,
    about = "Segmental accent analysis of speech representations"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "segprobe.toml")]
    pub config: PathBuf,
    /// Rerun stages even when their output is up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// With `pipeline`, stop after this stage.
    #[arg(long, global = true)]
    pub stage: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse alignments and ratings into token tables.
    Ingest,
    /// Compute MFCC frames for every ingested utterance.
    Mfcc,
    /// Train the frame-level phonological feature model.
    PhonetTrain,
    /// Average feature probabilities over each target token.
    PhonetScore,
    /// L1 probes over every layer of every representation.
    Probe,
    /// Feature correlations and relative weights.
    Svcca,
    /// Distances to the native and non-native baseline banks.
    Distance,
    /// Multinomial regression of accent ratings on distances.
    Regress,
    /// Collect the report tables.
    Report,
    /// Run all stages in dependency order.
    Pipeline,
    /// Write the synthetic fixture corpus and its config into DIR.
    Fixture { dir: PathBuf },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Ingest => Stage::Ingest,
            Command::Mfcc => Stage::Mfcc,
            Command::PhonetTrain => Stage::PhonetTrain,
            Command::PhonetScore => Stage::PhonetScore,
            Command::Probe => Stage::Probe,
            Command::Svcca => Stage::Svcca,
            Command::Distance => Stage::Distance,
            Command::Regress => Stage::Regress,
            Command::Report => Stage::Report,
            Command::Pipeline | Command::Fixture { .. } => return None,
        })
    }
}

/// Load, apply overrides and validate.
pub fn load_config(cli: &Cli) -> Result<Loaded, CliError> {
    let mut loaded = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        loaded.cfg.seed = s;
    }
    loaded.validate()?;
    Ok(loaded)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Fixture { dir } = &cli.command {
        return fixture::write_fixture(dir, cli.seed.unwrap_or(fixture::FIXTURE_SEED));
    }
    if cli.stage.is_some() && !matches!(cli.command, Command::Pipeline) {
        return Err(CliError::config("--stage only applies to `pipeline`"));
    }
    let stop = cli.stage.as_deref().map(str::parse::<Stage>).transpose()?;
    let ctx = Ctx::new(load_config(cli)?, cli.force);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
    pool.install(|| match cli.command.stage() {
        Some(s) => run_stage(&ctx, s).map(|_| ()),
        None => {
            for s in Stage::ALL {
                run_stage(&ctx, s)?;
                if Some(s) == stop {
                    break;
                }
            }
            Ok(())
        }
    })
}
