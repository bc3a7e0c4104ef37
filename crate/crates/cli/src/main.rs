mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use midframe::dataset::DatasetLayout;
use midframe::ErrorKind;

use crate::config::ConfigArgs;

/// Frame interpolation with analytical optical flow.
#[derive(Debug, Parser)]
#[command(name = "midframe", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize in-between frame(s) for one pair.
    Interpolate {
        frame0: PathBuf,
        frame1: PathBuf,
        /// Output image; with several timesteps a `_t0.250` style suffix is
        /// inserted before the extension.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Raise the frame rate of a directory of frames.
    Sequence {
        in_dir: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = parse_factor)]
        factor: usize,
    },
    /// Estimate flow and write it as `.flo` plus a color-wheel PNG.
    Flow {
        frame0: PathBuf,
        frame1: PathBuf,
        /// Output prefix: writes `<out>.flo` and `<out>.png`.
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the flow from frame1 to frame0 as `<out>_10.*`.
        #[arg(long)]
        bidirectional: bool,
    },
    /// Evaluate the pipeline on a triplet dataset.
    Benchmark {
        root: PathBuf,
        #[arg(long, default_value = "triplet-dirs")]
        layout: DatasetLayout,
        /// CSV report; an aligned table is written next to it as `.txt`.
        #[arg(short, long)]
        report: PathBuf,
    },
    /// Train the fusion network on a triplet dataset.
    Train {
        root: PathBuf,
        #[arg(long, default_value = "triplet-dirs")]
        layout: DatasetLayout,
        /// Checkpoint to write.
        #[arg(short, long)]
        out: PathBuf,
        /// Loss history CSV (default: `<out>.history.csv`).
        #[arg(long)]
        history: Option<PathBuf>,
    },
}

/// Bad invocation or settings: exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Unusable input data: exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<midframe::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            };
        }
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = cli.config.resolve().and_then(|cfg| match cli.command {
        Command::Interpolate { frame0, frame1, out } => commands::interpolate(&frame0, &frame1, &out, &cfg),
        Command::Sequence { in_dir, out_dir, factor } => commands::sequence(&in_dir, &out_dir, factor, &cfg),
        Command::Flow { frame0, frame1, out, bidirectional } => {
            commands::flow(&frame0, &frame1, &out, bidirectional, &cfg)
        }
        Command::Benchmark { root, layout, report } => commands::benchmark(&root, layout, &report, &cfg),
        Command::Train { root, layout, out, history } => {
            commands::train(&root, layout, &out, history.as_deref(), &cfg)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn parse_factor(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err(format!("factor must be 2 or 4, got {s}")),
    }
}
