use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use inexact_dane::harness::{self, ExperimentConfig, ExperimentReport};

#[derive(Parser)]
#[command(
    name = "dane",
    version,
    about = "Distributed optimization experiments on a simulated cluster"
)]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, env = "DANE_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration that describes a single run.
    Run { config: PathBuf },
    /// Expand every sweep axis and run the cross-product.
    Sweep {
        config: PathBuf,
        /// Run the sweep points sequentially.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the best run per data set and algorithm.
    Analyze { dir: PathBuf },
    /// Re-execute the runs recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    if cfg.output.is_absolute() {
        cfg.output.clone()
    } else {
        root.join(&cfg.output)
    }
}

fn summarize(report: &ExperimentReport) {
    for run in &report.runs {
        println!(
            "{}\t{}\tf = {:e}\trounds = {}",
            run.resolved.spec.id(),
            run.resolved.spec.base.algorithm,
            run.final_value(),
            run.trace.last().comm_rounds
        );
    }
    println!("manifest: {}", report.manifest.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => ExperimentConfig::from_file(&config).and_then(|cfg| {
            let runs = cfg.expand().len();
            if runs != 1 {
                return Err(inexact_dane::Error::Config(format!(
                    "config expands to {runs} runs; use 'sweep'"
                )));
            }
            harness::run_experiment(&cfg, &output_dir(&cli.output_root, &cfg), false)
                .map(|r| summarize(&r))
        }),
        Command::Sweep { config, sequential } => {
            ExperimentConfig::from_file(&config).and_then(|cfg| {
                harness::run_experiment(&cfg, &output_dir(&cli.output_root, &cfg), !sequential)
                    .map(|r| summarize(&r))
            })
        }
        Command::Analyze { dir } => harness::analyze(&dir).map(|table| print!("{table}")),
        Command::Replay { manifest, out } => {
            let out =
                out.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
            harness::replay_manifest(&manifest, &out).map(|r| summarize(&r))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
