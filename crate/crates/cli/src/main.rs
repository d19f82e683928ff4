//! `seisgrav`: run forward and inverse pipelines from scenario files.

mod commands;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Run;
use output::OutDir;
use scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scenario error: {0}")]
    Schema(String),
    #[error("scenario has no [{0}] section")]
    Missing(&'static str),
    #[error(transparent)]
    Core(#[from] seisgrav::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Schema(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "seisgrav", version, about = "Rays, amplitudes, interfaces and gravity for self-gravitating acoustic media")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for noise and random draws; overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative integration tolerance for ray tracing.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "SEISGRAV_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace rays and transport the principal amplitude.
    Trace { scenario: PathBuf },
    /// Potential and hydrostatic pressure profiles.
    Gravity { scenario: PathBuf },
    /// Reflection and transmission curves with Brewster and critical markers.
    Reflectivity { scenario: PathBuf },
    /// Synthetic reflection samples with optional noise.
    Synthesize { scenario: PathBuf },
    /// Recover the lower-side material and jets at one interface.
    InvertInterface {
        scenario: PathBuf,
        /// Samples CSV written by `synthesize`; synthesized from the scenario when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Recover a layered radial ball from normal-incidence reflections.
    InvertLayers { scenario: PathBuf },
    /// Sweep the Carleman inequalities over beta.
    CheckCarleman { scenario: PathBuf },
    /// Run the property and oracle suite.
    Verify {
        /// Run only these checks (1-based ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if cli.threads > 0 {
        // Fails only if a pool already exists, in which case the existing one is used.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let mut out = OutDir::create(&cli.out)?;
    let path = match &cli.command {
        Command::Verify { only } => return commands::verify_suite(&mut out, only),
        Command::Trace { scenario }
        | Command::Gravity { scenario }
        | Command::Reflectivity { scenario }
        | Command::Synthesize { scenario }
        | Command::InvertInterface { scenario, .. }
        | Command::InvertLayers { scenario }
        | Command::CheckCarleman { scenario } => scenario.clone(),
    };
    let scenario = Scenario::load(&path)?;
    println!("scenario {}", scenario.name);
    let mut r = Run { scenario: &scenario, seed: cli.seed.unwrap_or(scenario.seed), tol: cli.tol, out };
    match &cli.command {
        Command::Trace { .. } => commands::trace(&mut r)?,
        Command::Gravity { .. } => commands::gravity(&mut r)?,
        Command::Reflectivity { .. } => commands::reflectivity(&mut r)?,
        Command::Synthesize { .. } => commands::synthesize(&mut r)?,
        Command::InvertInterface { samples, .. } => commands::invert_interface(&mut r, samples.as_deref())?,
        Command::InvertLayers { .. } => commands::invert_layers(&mut r)?,
        Command::CheckCarleman { .. } => commands::check_carleman(&mut r)?,
        Command::Verify { .. } => unreachable!(),
    }
    for p in &r.out.written {
        println!("{}", p.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
