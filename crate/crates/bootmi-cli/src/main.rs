//! Command-line front end: scenario simulation, real-dataset analysis, and
//! evidence-path reports.

mod analyze;
mod grid;
mod simulate;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "bootmi",
    about = "Sequential evidence variable selection under missing data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write tidy metric CSVs plus a manifest.
    Simulate(simulate::SimulateArgs),
    /// Analyze a CSV dataset with the sequential evidence procedure.
    Analyze(analyze::AnalyzeArgs),
    /// Summarize evidence paths from a run_summary.json.
    EvidenceReport(EvidenceReportArgs),
}

#[derive(clap::Args)]
pub struct EvidenceReportArgs {
    /// Path to a run_summary.json produced by `analyze`.
    summary: PathBuf,
    /// Write the per-variable statistics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn evidence_report(args: &EvidenceReportArgs) -> anyhow::Result<()> {
    let summary = bootmi::report::RunSummary::load(&args.summary)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let stats = bootmi::report::path_statistics(&summary).map_err(|e| anyhow::anyhow!("{e}"))?;
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            bootmi::report::write_path_statistics_csv(&stats, std::io::BufWriter::new(file))?;
        }
        None => {
            bootmi::report::write_path_statistics_csv(&stats, std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Analyze(args) => analyze::run(args),
        Command::EvidenceReport(args) => evidence_report(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        let code = if err.is::<analyze::CalibrationFallbackExit>() {
            2
        } else {
            1
        };
        std::process::exit(code);
    }
}
