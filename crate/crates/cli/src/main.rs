use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use raea_cli::commands;
use raea_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "raea", version, about = "Entity alignment and product matching pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set max_epochs=300`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic aligned graph pair.
    Synth,
    /// Load and validate both graphs and the seed alignment.
    BuildKg,
    /// Apply the blocking rules to the product files.
    RoughFilter,
    /// Train every enabled channel.
    Train,
    /// Ensemble trained channels into a similarity matrix and Top-K lists.
    Align,
    /// Score the similarity matrix against the test pairs.
    Evaluate,
    /// Run every stage in one process.
    Pipeline,
    /// Run the full model and its five ablation variants.
    Ablate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    match cli.command {
        Command::Synth => {
            let conf = commands::cmd_synth(&cfg)?;
            println!("{}", conf.display());
        }
        Command::BuildKg => {
            commands::cmd_build_kg(&cfg)?;
        }
        Command::RoughFilter => {
            commands::cmd_rough_filter(&cfg)?;
        }
        Command::Train => {
            commands::cmd_train(&cfg)?;
        }
        Command::Align => {
            commands::cmd_align(&cfg)?;
        }
        Command::Evaluate => print!("{}", commands::cmd_evaluate(&cfg)?),
        Command::Pipeline => {
            let result = commands::cmd_pipeline(&cfg)?;
            print!("{}", result.report.to_text());
        }
        Command::Ablate => {
            for row in commands::cmd_ablate(&cfg)? {
                println!("{}\thits@1 {:.4}", row.variant, row.hits1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
