//! `cohortforge`: batch driver for flattening, extraction, cohort algebra,
//! statistics, feature export and synthetic data generation.
//!
//! Exit status: 0 on success, 1 on validation errors (bad arguments,
//! configs or scripts), 2 on data integrity errors.

mod commands;
mod manifest;
mod script;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cohortforge_core::ErrorClass;

use crate::manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "cohortforge", version, about = "Claims data flattening and cohort extraction")]
struct Cli {
    /// Worker threads for parallel phases; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic star schema with matching configs.
    Synth(SynthArgs),
    /// Denormalize the star schema into flat.cft.
    Flatten(PhaseArgs),
    /// Extract events and cohorts from flat.cft.
    Extract(PhaseArgs),
    /// Run a cohort algebra script.
    Cohort(PhaseArgs),
    /// Compute descriptive statistics for extracted cohorts.
    Stats(StatsArgs),
    /// Export cohorts as dense feature tensors.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct PhaseArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Mixed,
    Dcir,
    Pmsi,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator config (TOML); the preset is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mixed")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patients: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Lineage document written by `extract`.
    #[arg(long)]
    pub metadata: PathBuf,
    /// Cohorts to describe; all of them when omitted.
    #[arg(long)]
    pub cohort: Vec<String>,
    /// Statistics to compute; all builtins when omitted.
    #[arg(long)]
    pub stat: Vec<String>,
    /// Age reference date (YYYY-MM-DD); the study start by default.
    #[arg(long)]
    pub reference_date: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub bucket_years: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub metadata: PathBuf,
    #[arg(long, required = true)]
    pub cohort: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub bucket_days: u32,
    /// Drop events failing sanity checks instead of aborting.
    #[arg(long)]
    pub drop_invalid: bool,
    /// Weight continuous events by covered days per bucket.
    #[arg(long)]
    pub duration_weighted: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Flatten(_) => "flatten",
            Command::Extract(_) => "extract",
            Command::Cohort(_) => "cohort",
            Command::Stats(_) => "stats",
            Command::Export(_) => "export",
        }
    }

    fn out(&self) -> &PathBuf {
        match self {
            Command::Synth(a) => &a.out,
            Command::Flatten(a) | Command::Extract(a) | Command::Cohort(a) => &a.out,
            Command::Stats(a) => &a.out,
            Command::Export(a) => &a.out,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cohortforge_core::Error>() {
        Some(e) if e.class() == ErrorClass::DataIntegrity => 2,
        _ => 1,
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let c = cause.to_string();
        if !out.contains(&c) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&c);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COHORTFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = cli.workers.unwrap_or(0);
    let mut manifest = Manifest::new(cli.command.name(), workers);
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| {
            manifest.workers = pool.current_num_threads();
            pool.install(|| commands::run(&cli.command, &mut manifest))
        });
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", render(e));
            exit_code(e)
        }
    };
    manifest.exit_status = code;
    if let Err(e) = result {
        manifest.error = Some(render(&e));
    }
    if let Err(e) = manifest.write(cli.command.out()) {
        eprintln!("error: could not write manifest: {e:#}");
    }
    ExitCode::from(code)
}
