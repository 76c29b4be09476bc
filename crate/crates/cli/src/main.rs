use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::Value;

mod commands;
mod config;
mod data;
mod manifest;

use data::UsageError;

/// Detector evaluation under domain shift: background-wise AP and D-ECE,
/// MC-dropout uncertainty maps, MCDO-NMS, shift analysis and synthetic
/// fixtures.
///
/// Settings resolve in three layers: built-in defaults, then the
/// `[<subcommand>]` table of `--config`, then flags. Exit status is 0 on
/// success, 1 on usage errors and 2 on data or validation errors.
#[derive(Parser)]
#[command(name = "driftbench", version)]
struct Cli {
    /// TOML file with one table per subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads [default: logical cores]
    #[arg(long, global = true, env = "DRIFTBENCH_THREADS")]
    threads: Option<usize>,

    /// Where to write the run manifest [default: beside the main output]
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Background-wise AP and D-ECE table
    Eval(commands::eval::EvalArgs),
    /// Detection expected calibration error with per-cell diagnostics
    Dece(commands::dece::DeceArgs),
    /// Pixel-wise MC-dropout uncertainty maps and their scalars
    McdoMap(commands::mcdo::MapArgs),
    /// Per-list localization and classification uncertainty across passes
    McdoNms(commands::mcdo::NmsArgs),
    /// KL divergence between source and target feature distributions
    Klcorr(commands::klcorr::KlArgs),
    /// Adversarial discriminator simulation on uncertainty maps
    UdaSim(commands::uda::UdaArgs),
    /// Synthetic multi-domain fixtures
    Synthgen(commands::synth::SynthArgs),
    /// Metric normalization and correlation matrix
    Report(commands::report::ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Eval(_) => "eval",
            Command::Dece(_) => "dece",
            Command::McdoMap(_) => "mcdo-map",
            Command::McdoNms(_) => "mcdo-nms",
            Command::Klcorr(_) => "klcorr",
            Command::UdaSim(_) => "uda-sim",
            Command::Synthgen(_) => "synthgen",
            Command::Report(_) => "report",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let threads = match cli.threads {
        Some(0) => return Err(UsageError("--threads must be at least 1".into()).into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let file: Option<Value> = cli.config.as_deref().map(config::load_config_file).transpose()?;
    let file = file.as_ref();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let name = cli.command.name();
    let rec = pool.install(|| match &cli.command {
        Command::Eval(a) => commands::eval::run(a, file),
        Command::Dece(a) => commands::dece::run(a, file),
        Command::McdoMap(a) => commands::mcdo::run_map(a, file),
        Command::McdoNms(a) => commands::mcdo::run_nms(a, file),
        Command::Klcorr(a) => commands::klcorr::run(a, file),
        Command::UdaSim(a) => commands::uda::run(a, file),
        Command::Synthgen(a) => commands::synth::run(a, file),
        Command::Report(a) => commands::report::run(a, file),
    })?;
    let path = cli.manifest.clone().unwrap_or_else(|| rec.default_path.clone());
    manifest::write_manifest(
        &path,
        name,
        cli.config.as_deref(),
        &rec,
        threads,
        start.elapsed().as_secs_f64(),
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
