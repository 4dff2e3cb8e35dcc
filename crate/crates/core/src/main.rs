use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use mather_ep::cli::{self, EXIT_ANALYSIS_ERROR, EXIT_CONFIG_ERROR, EXIT_OK};
use mather_ep::Error;

#[derive(Parser)]
#[command(name = "mather-ep", version, about = "Entropy-penalized Mather measures on the torus")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configuration and write its artifacts and summary.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and MATHER_EP_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a configuration without solving anything.
    Validate { config: PathBuf },
    /// Render a report JSON as SVG.
    Plot {
        report: PathBuf,
        #[arg(long)]
        kind: String,
        /// Destination file; defaults to the report path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG_ERROR as u8,
        _ => EXIT_ANALYSIS_ERROR as u8,
    }
}

fn plot(report: PathBuf, kind: &str, out: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("report is not JSON")?;
    let svg = mather_ep::plot::emit_plot(&value, kind)?;
    let dest = out.unwrap_or_else(|| report.with_extension("svg"));
    std::fs::write(&dest, svg).with_context(|| format!("writing {}", dest.display()))?;
    Ok(dest)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.command {
        Command::Run { config, out } => match cli::run(&config, out.as_deref()) {
            Ok(outcome) => {
                println!(
                    "{} (exit {})",
                    outcome.output_dir.join("summary.json").display(),
                    outcome.exit_code
                );
                ExitCode::from(outcome.exit_code as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(code(&e))
            }
        },
        Command::Validate { config } => match cli::load(&config) {
            Ok(v) => {
                println!(
                    "ok: {} schedule points, {} analyses, velocity cutoff {}",
                    v.schedule.len(),
                    v.config.analyses.len(),
                    v.cutoff
                );
                ExitCode::from(EXIT_OK as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(code(&e))
            }
        },
        Command::Plot { report, kind, out } => match plot(report, &kind, out) {
            Ok(dest) => {
                println!("{}", dest.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                let config_like = e
                    .downcast_ref::<Error>()
                    .is_some_and(|e| matches!(e, Error::UnknownReportKind(_)));
                ExitCode::from(if config_like { EXIT_CONFIG_ERROR as u8 } else { EXIT_ANALYSIS_ERROR as u8 })
            }
        },
    }
}
