use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mkvlab::experiment::{run_and_write, Experiment, RunConfig};

/// Run one McKean-Vlasov lab experiment and write its artifacts.
#[derive(Debug, Parser)]
#[command(name = "mkvlab", version)]
struct Cli {
    /// rates, verify-assumptions, psi-check, contract, chaos,
    /// coupling-consistency, appendix-scaling or moments
    experiment: String,
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `output`, else out/<experiment>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override `sim.master_seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replica parallelism
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, String> {
    let experiment: Experiment = cli.experiment.parse().map_err(|e| format!("{e}"))?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    let mut config =
        RunConfig::from_path(&cli.config).map_err(|e| format!("{}: {e}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.sim.master_seed = seed;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(experiment.name()));
    let outcome = run_and_write(&config, experiment, &dir).map_err(|e| e.to_string())?;
    println!(
        "{}: {} (artifacts in {})",
        experiment,
        if outcome.pass { "pass" } else { "FAIL" },
        dir.display()
    );
    Ok(outcome.pass)
}
