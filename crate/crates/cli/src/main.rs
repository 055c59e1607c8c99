use clap::Parser;
use phaseplane_cli::commands::{run, Command, RunError};
use phaseplane_cli::config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Time-frequency tile experiments: wavelet checks, tree decompositions,
/// tile-type and Carleson pairing statistics.
#[derive(Parser, Debug)]
#[command(name = "phaseplane", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; overrides PHASEPLANE_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides PHASEPLANE_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let config = config.with_overrides(cli.seed, cli.out.clone())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(phaseplane_cli::config::ConfigError { field: "threads", message: "must be positive".into() }.into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| RunError::Io(std::io::Error::other(e)))?;
    }
    let output = run(cli.command, &config)?;
    for path in &output.artifacts {
        println!("{}", path.display());
    }
    println!("{}", output.manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
