//! `hyperleaf` command-line entry point.

mod commands;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hyperleaf::degrade::DownsampleMethod;
use hyperleaf::metrics::PeakMode;
use hyperleaf::Error;

#[derive(Parser, Debug)]
#[command(name = "hyperleaf", version, about = "Hyperspectral super-resolution trained on dead-leaves abundances")]
struct Cli {
    /// Seed for every random draw; overrides gen.seed and train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate dead-leaves HR/LR abundance pairs and a manifest.
    GenData {
        /// key=value file with dataset.count, gen.* and psf.* keys.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur and downsample one tensor.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[arg(long, default_value_t = 6.0)]
        truncation: f64,
        #[arg(long, default_value_t = DownsampleMethod::Bicubic)]
        method: DownsampleMethod,
    },
    /// Train the network on a generated dataset.
    Train {
        /// Manifest file or dataset directory.
        #[arg(long)]
        manifest: PathBuf,
        /// key=value file with arch.* keys; defaults apply when omitted.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// key=value file with train.* keys; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt_dir: PathBuf,
        /// Continue from the latest checkpoint in --ckpt-dir.
        #[arg(long)]
        resume: bool,
    },
    /// Super-resolve a low-resolution abundance map.
    Infer {
        /// A ckpt_<epoch> directory, or a training directory (latest checkpoint).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Mix abundances with an endmember matrix (stored as L×N×1).
    Mix {
        #[arg(long)]
        endmembers: PathBuf,
        #[arg(long)]
        abundances: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare an estimate against a reference and write a metrics CSV.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        ratio: f64,
        #[arg(long, default_value_t = PeakMode::Fixed(1.0))]
        peak: PeakMode,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate, train, super-resolve real abundances, mix and evaluate.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Print the plan and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Degrade { .. } => "degrade",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Mix { .. } => "mix",
            Command::Eval { .. } => "eval",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("HYPERLEAF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("HYPERLEAF_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let seed = cli.seed;
    eprintln!("# hyperleaf {} seed={}", cli.command.name(), seed.map_or("config".to_string(), |s| s.to_string()));
    match cli.command {
        Command::GenData { config, out } => commands::gen_data(&config, &out, seed),
        Command::Degrade { input, output, sigma, factor, truncation, method } => {
            commands::degrade(&input, &output, sigma, factor, truncation, method)
        }
        Command::Train { manifest, arch, config, ckpt_dir, resume } => {
            commands::train(&manifest, arch.as_deref(), config.as_deref(), &ckpt_dir, resume, seed)
        }
        Command::Infer { ckpt, input, output, tile, overlap } => commands::infer(&ckpt, &input, &output, tile, overlap),
        Command::Mix { endmembers, abundances, output } => commands::mix(&endmembers, &abundances, &output),
        Command::Eval { reference, estimate, ratio, peak, report } => {
            commands::eval(&reference, &estimate, ratio, peak, &report)
        }
        Command::Pipeline { config, dry_run } => pipeline::run(&config, dry_run, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("usage_error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
