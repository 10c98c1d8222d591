use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vqastab::pipeline::{run_stage, Overrides, PipelineError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "vqastab", version, about = "Answer stability analysis for vision-language models")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "vqastab.toml")]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only use the first N samples after a seeded shuffle.
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render visual variants and generate textual variants.
    Perturb,
    /// Query every endpoint on the perturbed inputs.
    Run,
    /// Build stability profiles, tables and statistics.
    Analyze,
    /// Train and evaluate the correctness predictor.
    Predict,
    /// Render the HTML report and figures.
    Report,
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose { tracing::Level::INFO } else { tracing::Level::WARN })
        .init();
    let overrides = Overrides {
        out_dir: cli.out.clone(),
        seed: cli.seed,
        limit: cli.limit,
    };
    let cfg = match RunConfig::load(&cli.config, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let stage = match cli.command {
        Command::Perturb => Stage::Perturb,
        Command::Run => Stage::Run,
        Command::Analyze => Stage::Analyze,
        Command::Predict => Stage::Predict,
        Command::Report => Stage::Report,
    };
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run_stage(stage, &cfg)) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
