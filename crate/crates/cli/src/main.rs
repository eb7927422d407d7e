use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchsift_core::dataset::{BandMode, Normalize};
use patchsift_core::error::ErrorClass;
use patchsift_core::kernels::{Gamma, KernelKind};
use patchsift_core::klsh::AnchorMode;
use patchsift_core::{Error, Result};

mod commands;
mod config;

use config::FileConfig;

/// Hash image patches with kernelized LSH and thin redundant ones per bucket.
#[derive(Parser, Debug)]
#[command(name = "patchsift", version, about)]
struct Cli {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a patch pack from a PGM/PPM directory or re-validate a pack.
    Ingest(IngestArgs),
    /// Build a hash family and hash every patch.
    Hash(HashArgs),
    /// Select a subset of patches.
    Sample(SampleArgs),
    /// Write Hamming separation, bucket occupancy and table dump CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of .pgm/.ppm files.
    #[arg(long, requires = "manifest", conflicts_with = "pack")]
    images: Option<PathBuf>,
    /// CSV with header `file,label,tile_id,x,y`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Existing pack to re-validate and copy.
    #[arg(long, required_unless_present = "images")]
    pack: Option<PathBuf>,
    /// Output pack; its manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HashFlags {
    /// Code length I (1..=64).
    #[arg(long)]
    bits: Option<u32>,
    /// Anchors per bit M.
    #[arg(long)]
    anchors: Option<usize>,
    /// Subset size t.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, value_name = "resample|shared")]
    anchor_mode: Option<AnchorMode>,
    #[arg(long, value_name = "rbf|laplacian|polynomial")]
    kernel: Option<KernelKind>,
    /// Kernel width, or `auto`.
    #[arg(long)]
    gamma: Option<Gamma>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    coef0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative eigenvalue cutoff for the inverse square root.
    #[arg(long)]
    eig_tol: Option<f64>,
    #[arg(long)]
    center_kernel: Option<bool>,
    #[arg(long, value_name = "none|zscore|global_unit")]
    normalize: Option<Normalize>,
    #[arg(long)]
    downsample: Option<u32>,
    #[arg(long, value_name = "all|luminance")]
    band_mode: Option<BandMode>,
}

#[derive(Args, Debug)]
struct HashArgs {
    #[arg(long)]
    pack: PathBuf,
    /// Work directory; receives family.klf and codes.csv.
    #[arg(long)]
    out: PathBuf,
    /// Bucket key length used for the printed occupancy.
    #[arg(long)]
    prefix_bits: Option<u32>,
    #[command(flatten)]
    flags: HashFlags,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("mode").args(["epsilon", "target", "cap"]))]
struct SampleArgs {
    #[arg(long)]
    pack: PathBuf,
    /// Work directory written by `hash`.
    #[arg(long)]
    dir: PathBuf,
    /// Output directory (default: the work directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prefix_bits: Option<u32>,
    /// Variance threshold in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Desired number of selected patches.
    #[arg(long)]
    target: Option<usize>,
    /// Uniform baseline: at most this many patches per bucket.
    #[arg(long)]
    cap: Option<usize>,
    /// Seed for the cap baseline.
    #[arg(long)]
    seed: Option<u64>,
    /// Rows the variance report is computed over.
    #[arg(long, value_name = "features|pixels")]
    variance_on: Option<commands::VarianceOn>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    pack: PathBuf,
    /// Work directory written by `hash`.
    #[arg(long)]
    dir: PathBuf,
    /// Output directory (default: the work directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prefix_bits: Option<u32>,
    /// Seed for pair sampling on large corpora.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(threads) = file.pick(cli.threads, "threads")? {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(a.images.as_deref(), a.manifest.as_deref(), a.pack.as_deref(), &a.out),
        Command::Hash(a) => commands::hash(&file, &a.pack, &a.out, a.prefix_bits, &a.flags),
        Command::Sample(a) => {
            let out = a.out.as_deref().unwrap_or(&a.dir);
            let mode = commands::ModeFlags {
                epsilon: a.epsilon,
                target: a.target,
                cap: a.cap,
                seed: a.seed,
            };
            commands::sample(&file, &a.pack, &a.dir, out, a.prefix_bits, mode, a.variance_on)
        }
        Command::Report(a) => {
            let out = a.out.as_deref().unwrap_or(&a.dir);
            commands::report(&file, &a.pack, &a.dir, out, a.prefix_bits, a.seed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Usage => ExitCode::from(2),
                ErrorClass::Failure => ExitCode::from(3),
            }
        }
    }
}
