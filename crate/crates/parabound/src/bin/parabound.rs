//! Scenario runner: verifies pointwise parabolic bounds on model
//! geometries and writes JSON/CSV reports.
//!
//! Exit codes: 0 all pass, 1 any bound violation, 2 configuration error,
//! 3 under-resolved. `PARABOUND_THREADS` caps worker parallelism.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use parabound::error::Error;
use parabound::scenario::{self, ExitClass, RunOptions, ScenarioOutcome};

#[derive(Parser)]
#[command(name = "parabound", version, about = "Heat-kernel Duhamel operators and pointwise bounds for semilinear parabolic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Single-resolution exploratory run (no error-model gate; reports
    /// are marked "ungated").
    #[arg(long, global = true)]
    single: bool,
    /// Output directory for the summary JSON and points CSV.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the per-axis grid resolution of every scenario.
    #[arg(long, global = true, value_name = "N")]
    resolution: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run { scenario: PathBuf },
    /// Run every `*.json` scenario in a directory.
    Suite { dir: PathBuf },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PARABOUND_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        } else {
            eprintln!("warning: PARABOUND_THREADS is not a number; ignoring");
        }
    }
    let cli = Cli::parse();
    let opts = RunOptions { single: cli.single, resolution_override: cli.resolution };

    let paths = match &cli.command {
        Command::Run { scenario } => vec![scenario.clone()],
        Command::Suite { dir } => match scenario_paths(dir) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(ExitClass::Config.code() as u8);
            }
        },
    };
    if paths.is_empty() {
        eprintln!("error: no scenario files found");
        return ExitCode::from(ExitClass::Config.code() as u8);
    }

    let mut results: Vec<(String, Result<ScenarioOutcome, Error>)> = paths
        .par_iter()
        .map(|path| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            (name, run_one(path, &opts))
        })
        .collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut exit = ExitClass::Pass;
    for (name, result) in &results {
        match result {
            Ok(outcome) => {
                if let Err(e) = write_outputs(&cli.out, outcome) {
                    eprintln!("{name}: failed to write reports: {e}");
                    exit = worst(exit, ExitClass::Config);
                    continue;
                }
                let verdict = match outcome.exit {
                    ExitClass::Pass => "pass",
                    ExitClass::Violation => "VIOLATION",
                    ExitClass::UnderResolved => "UNDER-RESOLVED",
                    ExitClass::Config => "CONFIG",
                };
                println!("{name}: {verdict}");
                exit = worst(exit, outcome.exit);
            }
            Err(e) => {
                let class = classify(e);
                println!(
                    "{name}: {}",
                    match class {
                        ExitClass::UnderResolved => "UNDER-RESOLVED",
                        _ => "CONFIG ERROR",
                    }
                );
                eprintln!("{name}: {e}");
                exit = worst(exit, class);
            }
        }
    }
    ExitCode::from(exit.code() as u8)
}

fn run_one(path: &Path, opts: &RunOptions) -> Result<ScenarioOutcome, Error> {
    let file = scenario::load_file(path)?;
    let validated = scenario::validate(file)?;
    scenario::run_scenario(&validated, opts)
}

fn scenario_paths(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    paths.sort();
    Ok(paths)
}

fn write_outputs(out_dir: &Path, outcome: &ScenarioOutcome) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join(format!("{}.summary.json", outcome.name)),
        &outcome.summary_json,
    )?;
    std::fs::write(
        out_dir.join(format!("{}.points.csv", outcome.name)),
        &outcome.points_csv,
    )
}

fn classify(e: &Error) -> ExitClass {
    match e {
        Error::UnderResolved(_) => ExitClass::UnderResolved,
        _ => ExitClass::Config,
    }
}

fn worst(a: ExitClass, b: ExitClass) -> ExitClass {
    // Precedence: configuration failures beat violations beat
    // under-resolution beats pass.
    let rank = |c: ExitClass| match c {
        ExitClass::Config => 3,
        ExitClass::Violation => 2,
        ExitClass::UnderResolved => 1,
        ExitClass::Pass => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}
