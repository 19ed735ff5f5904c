use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metaldc::adapt::AdaptVariant;
use metaldc_cli::commands::{self, Sweep};
use metaldc_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "metaldc", version, about = "Meta-trained low-dimensional computing experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the LDC models of the configured methods.
    MetaTrain,
    /// Adapt and score every configured method on the evaluation tasks.
    Evaluate,
    /// Adapt one checkpoint to one evaluation task.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        task: usize,
        #[arg(long, value_enum, default_value = "last-layer")]
        variant: VariantArg,
    },
    /// Accuracy against K (training shots) or M (adaptation shots).
    Ablate {
        #[arg(long, value_enum)]
        sweep: SweepArg,
    },
    /// Accuracy under random bit flips of the deployed models.
    Robustness,
    /// Inspect serialized models.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Train the HDC baseline.
    HdcTrain,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Byte breakdown of an LDC1 or HDC1 file.
    Size { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    LastLayer,
    Full,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    K,
    M,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Model {
            command: ModelCommand::Size { file },
        } => commands::model_size(file),
        Command::MetaTrain => commands::meta_train(&config(cli)?),
        Command::Evaluate => commands::evaluate(&config(cli)?),
        Command::Adapt { model, task, variant } => {
            let v = match variant {
                VariantArg::LastLayer => AdaptVariant::LastLayer,
                VariantArg::Full => AdaptVariant::Full,
                VariantArg::None => AdaptVariant::None,
            };
            commands::adapt(&config(cli)?, model, *task, v)
        }
        Command::Ablate { sweep } => {
            let s = match sweep {
                SweepArg::K => Sweep::K,
                SweepArg::M => Sweep::M,
            };
            commands::ablate(&config(cli)?, s)
        }
        Command::Robustness => commands::robustness(&config(cli)?),
        Command::HdcTrain => commands::hdc_train(&config(cli)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
