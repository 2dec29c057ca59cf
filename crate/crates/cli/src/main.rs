//! `gslm` command-line front end.

mod commands;
mod dataset;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gslm::residuals::LossMode;
use gslm::Error;

#[derive(Debug, Parser)]
#[command(
    name = "gslm",
    version,
    about = "Fit 3D Gaussian scenes with Levenberg-Marquardt or ADAM"
)]
struct Cli {
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Fit a scene to a dataset.
    Fit(FitArgs),
    /// Report PSNR, SSIM and energy of a scene on a dataset.
    Eval(EvalArgs),
    /// Render one camera of a dataset.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    gaussians: usize,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    sh_degree: usize,
    /// Noise magnitude of the starting scene written to init.json.
    #[arg(long, default_value_t = 0.1)]
    perturb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Adam,
    Lm,
    TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    L1ssim,
    L2,
}

impl From<LossArg> for LossMode {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::L1ssim => LossMode::L1Ssim,
            LossArg::L2 => LossMode::L2,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Starting scene; defaults to the dataset's init.json.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::TwoStage)]
    mode: Mode,
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stage1_iters: Option<usize>,
    #[arg(long)]
    adam_iters: Option<usize>,
    #[arg(long)]
    lm_iters: Option<usize>,
    #[arg(long)]
    pcg_iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    num_batches: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Output image; `.pfm` or `.png`.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DegenerateSpec(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Render(args) => commands::render(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
