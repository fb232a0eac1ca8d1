//! Command-line front end: reproducible batch pipelines over the library.
//!
//! Every invocation resolves its configuration (flags, optional config file,
//! documented defaults), runs one subcommand, and writes a `run.manifest`
//! next to its outputs recording the resolved configuration, seeds, tool
//! version, and an FNV-1a digest of every input file read. Exit codes: 0
//! success, 1 validation or usage error, 2 I/O error.

mod commands;
mod config;
mod manifest;
mod util;

use clap::{Args, Parser, Subcommand};
use slicevol_core::Error;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "slicevol",
    version,
    about = "Model distributions of 3D volumes via 2D slice codecs and per-dimension Gaussians over the slice axis",
    max_term_width = 100
)]
struct Cli {
    /// Worker cap (defaults to SLICEVOL_THREADS, then 1); results are
    /// bit-identical for every value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled phantom volumes
    Phantom(PhantomArgs),
    /// Percentile-normalize (and optionally resample) volumes
    Preprocess(PreprocessArgs),
    /// Train a 2D slice codec on the slices of a volume directory
    TrainCodec(TrainCodecArgs),
    /// Encode volumes to per-slice latent sequences
    Encode(EncodeArgs),
    /// Fit the per-dimension Gaussian model over encoded volumes
    FitLatent(FitLatentArgs),
    /// Sample new volumes from a fitted model
    Sample(SampleArgs),
    /// Distribution and overlap metrics
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Train the intensity segmenter on labeled volumes
    SegmentTrain(SegmentTrainArgs),
    /// Segment one volume with a trained segmenter
    Segment(SegmentArgs),
    /// Affine-register a moving volume onto a fixed one
    Register(RegisterArgs),
    /// Resample a volume or label map through a transform
    Warp(WarpArgs),
    /// Realistic atlas score over generated and real volumes
    Ras(RasArgs),
    /// Run the full phantom-to-scores pipeline from a config file
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Volume dimensions as D,H,W
    #[arg(long, default_value = "32,32,32")]
    dims: String,
    /// Number of phantoms (seeds seed, seed+1, ...)
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Foreground classes (label maps get this plus background)
    #[arg(long, default_value_t = 4)]
    classes: u16,
    /// Voxel noise sigma
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Multiplicative bias field amplitude
    #[arg(long, default_value_t = 0.1)]
    bias: f64,
    /// Shape deformation amplitude, fraction of radius
    #[arg(long, default_value_t = 0.08)]
    deform: f64,
    /// Output directory for phantom_NNNN.svol / .slab
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of .svol volumes
    #[arg(long = "in")]
    input: PathBuf,
    /// Lower percentile mapped to 0
    #[arg(long, default_value_t = 1.0)]
    lo: f64,
    /// Upper percentile mapped to 1
    #[arg(long, default_value_t = 99.0)]
    hi: f64,
    /// Optional target dimensions D,H,W to resample to
    #[arg(long)]
    dims: Option<String>,
    /// Output directory (same file names)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCodecArgs {
    /// Codec family: linear or vae
    #[arg(long)]
    kind: String,
    /// Latent dimension per slice
    #[arg(long)]
    latent: usize,
    /// Directory of .svol volumes supplying training slices
    #[arg(long)]
    slices: PathBuf,
    /// Config file; keys: axis, and for vae: learning_rates, epochs,
    /// batch_size, beta_kl, hidden_width, seed
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output codec model file (.scdc)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    codec: PathBuf,
    /// Directory of .svol volumes to encode
    #[arg(long)]
    volumes: PathBuf,
    /// Slice axis: z, y, or x
    #[arg(long, default_value = "y")]
    axis: String,
    /// Output directory for .slat latent sequences
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitLatentArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    volumes: PathBuf,
    #[arg(long, default_value = "y")]
    axis: String,
    /// Keep singular values above this fraction of the largest
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
    /// Output model file (.slgm)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Fitted latent model (.slgm)
    #[arg(long)]
    latent: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "y")]
    axis: String,
    /// Output directory for sample_NNNN.svol
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Minibatch maximum mean discrepancy between two volume sets
    Mmd(MmdArgs),
    /// Multi-scale structural similarity diversity within one set
    Msssim(MsssimArgs),
    /// Dice overlap between two label directories, paired by sorted name
    Dice(DiceArgs),
}

#[derive(Args)]
struct MmdArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    real: PathBuf,
    /// Kernel: dot or rbf
    #[arg(long, default_value = "dot")]
    kernel: String,
    /// rbf bandwidth: median, or a fixed sigma value
    #[arg(long, default_value = "median")]
    bandwidth: String,
    #[arg(long, default_value_t = 100)]
    tests: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MsssimArgs {
    /// Directory of .svol volumes
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 11)]
    window: usize,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    /// Intensity dynamic range
    #[arg(long, default_value_t = 1.0)]
    range: f64,
}

#[derive(Args)]
struct DiceArgs {
    /// First directory of .slab label maps
    #[arg(long)]
    a: PathBuf,
    /// Second directory, paired with the first by sorted name
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct SegmentTrainArgs {
    #[arg(long)]
    volumes: PathBuf,
    /// Directory of .slab ground-truth label maps, paired by sorted name
    #[arg(long)]
    labels: PathBuf,
    /// Total classes including background
    #[arg(long)]
    classes: usize,
    /// Odd majority-vote window side; 1 disables smoothing
    #[arg(long, default_value_t = 3)]
    smoothing: usize,
    /// Output segmenter file (.sseg)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    segmenter: PathBuf,
    /// Input volume (.svol)
    #[arg(long = "in")]
    input: PathBuf,
    /// Output label map (.slab)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    fixed: PathBuf,
    /// Config file; keys: pyramid_levels, iters_per_level, step_size,
    /// beta1, beta2, objective, convergence_tol
    #[arg(long)]
    reg_config: Option<PathBuf>,
    /// Output transform file (.saff)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WarpArgs {
    /// Input .svol (trilinear) or .slab (nearest-neighbor)
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    transform: PathBuf,
    /// Output dimensions D,H,W (default: input dimensions)
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RasArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    real: PathBuf,
    /// Ground-truth .slab directory for the real volumes; when given,
    /// references come from it instead of the segmenter
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    segmenter: PathBuf,
    #[arg(long)]
    reg_config: Option<PathBuf>,
    /// Pair selection: all, or k:N for N random pairs
    #[arg(long, default_value = "all")]
    pairs: String,
    /// Seed for k-random pair selection
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config file's `out` directory
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses argv, runs one subcommand, and maps the outcome to an exit code:
/// 0 success, 1 validation or usage error, 2 I/O error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive as "errors" that print to stdout
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = resolve_threads(cli.threads) {
        eprintln!("error: {e}");
        return 1;
    }
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom::run(&a),
        Command::Preprocess(a) => commands::preprocess::run(&a),
        Command::TrainCodec(a) => commands::codec_cmd::train(&a),
        Command::Encode(a) => commands::codec_cmd::encode(&a),
        Command::FitLatent(a) => commands::latent_cmd::fit(&a),
        Command::Sample(a) => commands::latent_cmd::sample(&a),
        Command::Metrics(m) => match m {
            MetricsCommand::Mmd(a) => commands::metrics_cmd::mmd(&a),
            MetricsCommand::Msssim(a) => commands::metrics_cmd::msssim(&a),
            MetricsCommand::Dice(a) => commands::metrics_cmd::dice(&a),
        },
        Command::SegmentTrain(a) => commands::seg_cmd::train(&a),
        Command::Segment(a) => commands::seg_cmd::segment(&a),
        Command::Register(a) => commands::reg_cmd::register(&a),
        Command::Warp(a) => commands::reg_cmd::warp(&a),
        Command::Ras(a) => commands::ras_cmd::run(&a),
        Command::Pipeline(a) => commands::pipeline::run(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => 2,
                _ => 1,
            }
        }
    }
}

/// The tool is single-threaded today; the cap is validated and accepted so
/// configs stay stable if parallel execution lands later.
fn resolve_threads(flag: Option<usize>) -> slicevol_core::Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SLICEVOL_THREADS") {
            Ok(s) => s.parse::<usize>().map_err(|_| {
                Error::validation(format!("SLICEVOL_THREADS must be a positive integer, got {s:?}"))
            })?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(Error::validation("--threads must be at least 1"));
    }
    Ok(n)
}
