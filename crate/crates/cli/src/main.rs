use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use structpose::{ErrorKind, Result};

mod commands;
mod demo;

#[derive(Parser)]
#[command(name = "structpose", version, about = "Pose estimation with tree-structured feature learning")]
struct Cli {
    /// Worker threads for per-sample work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the data seed (gen-data) or the training seed (train).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

/// Where the run configuration comes from.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigSource {
    /// Configuration file (`key = value` with [model], [train], [data] and [infer] sections).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Bundled configuration: default, small or tiny.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples (default: [data] train_count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model; writes model.spl, loss.csv, config.ini and pairwise.csv.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset scored with strict PCP after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset; writes pcp.csv, pdj.csv and estimates.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration (default: config.ini next to the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        /// argmax, tree_dp or gdt (default: [infer] decode).
        #[arg(long)]
        decode: Option<String>,
    },
    /// Estimate the pose in one PGM image and export its score maps.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        decode: Option<String>,
        /// Also write raw little-endian f32 maps.
        #[arg(long)]
        raw: bool,
    },
    /// Shift a Gaussian blob with asymmetric kernels and export everything as PGMs.
    DemoShift {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
    },
    /// Print the receptive field after every layer.
    RfReport {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// paper-table1, or a bundled run configuration.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Print the fully resolved configuration.
    PrintConfig {
        #[command(flatten)]
        source: ConfigSource,
    },
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    // Only fails if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::GenData { source, out, count } => commands::gen_data(&source, &out, cli.seed, count),
        Command::Train { source, data, out, val } => commands::train(&source, &data, &out, val.as_deref(), cli.seed),
        Command::Eval { checkpoint, data, out, config, decode } => {
            commands::eval(&checkpoint, &data, &out, config.as_deref(), decode.as_deref())
        }
        Command::Predict { checkpoint, image, out, config, decode, raw } => {
            commands::predict(&checkpoint, &image, &out, config.as_deref(), decode.as_deref(), raw)
        }
        Command::DemoShift { out, size, sigma } => demo::demo_shift(&out, size, sigma),
        Command::RfReport { config, preset } => commands::rf_report(config.as_deref(), preset.as_deref()),
        Command::PrintConfig { source } => commands::print_config(&source),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
