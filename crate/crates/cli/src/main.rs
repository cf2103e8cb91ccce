use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairlab_cli::{execute, preset, CliError, Format, Mode, Options, RunConfig};

#[derive(Parser)]
#[command(name = "fairlab", version, about = "Stationary states and gradient flows in the fair-competition regime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (0: all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Comma-separated artifact formats: csv, json, svg.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML configuration.
    Run { config: PathBuf },
    /// Run a built-in configuration.
    Preset {
        /// figure1, figure2, psi-table, chic-1d or chic-log.
        name: String,
    },
    /// Run a chi-sweep configuration.
    Sweep { config: PathBuf },
    /// List the built-in configurations.
    Presets,
}

fn run(cli: Cli) -> Result<Option<String>, CliError> {
    let formats = cli.format.as_deref().map(Format::parse_list).transpose()?;
    let config = match &cli.command {
        Command::Run { config } => RunConfig::load(config)?,
        Command::Preset { name } => preset(name)?,
        Command::Sweep { config } => {
            let cfg = RunConfig::load(config)?;
            if cfg.mode != Mode::ChiSweep {
                return Err(CliError::Config(format!("{}: sweep needs mode = \"chi-sweep\"", config.display())));
            }
            cfg
        }
        Command::Presets => {
            for name in fairlab_cli::presets::names() {
                println!("{name}");
            }
            return Ok(None);
        }
    };
    let outcome = execute(&config, &Options { out: cli.out, jobs: cli.jobs, formats })?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(outcome.diagnosis)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(diagnosis)) => {
            eprintln!("fairlab: {diagnosis}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("fairlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
