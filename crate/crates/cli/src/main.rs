use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hicam::{
    cmd_analyze, cmd_compare_gating, cmd_end_to_end, cmd_simulate, cmd_timetag, default_workers, load_config,
    now_unix_ms, write_metadata, CliError, OutputLayout, Overrides,
};

/// Simulate and analyze an adaptively gated hybrid photon-counting camera.
///
/// Exit codes: 0 success, 1 invalid configuration, 2 I/O, 3 analysis failure.
#[derive(Debug, Parser)]
#[command(name = "hicam", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configuration frame count.
    #[arg(long, global = true)]
    frames: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write frames.jsonl.
    Simulate,
    /// Correlation histograms, fits and mode count from a frames file.
    Analyze {
        /// Frames file; defaults to <out>/frames.jsonl.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Photon-count statistics for every configured gating mode.
    CompareGating,
    /// Brightness-matching accuracy curves, from a frames file or a fresh simulation.
    Timetag {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// simulate, analyze, timetag and compare-gating in one run.
    EndToEnd,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::CompareGating => "compare-gating",
            Command::Timetag { .. } => "timetag",
            Command::EndToEnd => "end-to-end",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = now_unix_ms();
    let overrides = Overrides {
        seed: cli.seed,
        frames: cli.frames,
    };
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    let file_config = || load_config(cli.config.as_deref(), overrides);
    let layout = OutputLayout::new(&cli.out)?;
    let (seed, outputs) = match &cli.command {
        Command::Simulate => {
            let c = file_config()?;
            (c.seed, cmd_simulate(&c, &layout, workers)?)
        }
        Command::Analyze { input } => {
            let input = input.clone().unwrap_or_else(|| layout.frames());
            let c = cli.config.is_some().then(file_config).transpose()?;
            (c.as_ref().and_then(|c| c.seed), cmd_analyze(&input, c.as_ref(), &layout)?)
        }
        Command::CompareGating => {
            let c = file_config()?;
            (c.seed, cmd_compare_gating(&c, &layout, workers)?)
        }
        Command::Timetag { input } => {
            let c = (cli.config.is_some() || input.is_none()).then(file_config).transpose()?;
            let seed = c.as_ref().and_then(|c| c.seed);
            (seed, cmd_timetag(input.as_deref(), c.as_ref(), &layout, workers)?)
        }
        Command::EndToEnd => {
            let c = file_config()?;
            (c.seed, cmd_end_to_end(&c, &layout, workers)?)
        }
    };
    write_metadata(&layout, cli.command.name(), seed, workers, started, &outputs)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hicam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
