use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nnmut_cli::config::RunConfig;
use nnmut_cli::error::CliResult;
use nnmut_cli::{pipeline, report};

#[derive(Parser)]
#[command(
    name = "nnmut",
    version,
    about = "Mutation testing for feedforward networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config field, e.g. `--set search.k_max=3`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train or load the original population and build the datasets.
    Train(Common),
    /// Search the kill boundary of each operator on all three datasets.
    Search {
        #[command(flatten)]
        common: Common,
        /// Restrict to these operators.
        #[arg(long)]
        operator: Vec<String>,
    },
    /// Mutation scores, sensitivity, disagreement and stability.
    Score(Common),
    /// Activation spectra of the archived mutants.
    Spectra(Common),
    /// Assemble report.json and the CSV tables.
    Report(Common),
    /// All steps in order.
    Run(Common),
}

fn load(c: &Common) -> CliResult<RunConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("base_seed={s}"));
    }
    if let Some(o) = &c.out {
        overrides.push(format!(
            "out_dir={}",
            serde_json::Value::String(o.display().to_string())
        ));
    }
    RunConfig::load(&c.config, &overrides)
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train(c) => {
            pipeline::cmd_train(&load(&c)?)?;
        }
        Command::Search { common, operator } => {
            let cfg = load(&common)?;
            let state = pipeline::load_state(&cfg)?;
            pipeline::cmd_search(&cfg, &state, &operator)?;
        }
        Command::Score(c) => {
            let cfg = load(&c)?;
            let state = pipeline::load_state(&cfg)?;
            report::cmd_score(&cfg, &state)?;
        }
        Command::Spectra(c) => {
            let cfg = load(&c)?;
            let state = pipeline::load_state(&cfg)?;
            report::cmd_spectra(&cfg, &state)?;
        }
        Command::Report(c) => {
            report::cmd_report(&load(&c)?)?;
        }
        Command::Run(c) => {
            report::run_all(&load(&c)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
