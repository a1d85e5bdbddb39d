//! `acpseg`: synthetic scene generation, training, voting evaluation,
//! gradient checks, spatial benchmarks and ablation grids.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use acpseg::data::{RunConfig, SceneSpec};

#[derive(Parser, Debug)]
#[command(name = "acpseg", version, about = "Point-cloud segmentation with angle-correlation convolutions")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every random stream; overrides the dataset, train and eval seeds of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic labeled scenes as cloud files.
    Gen(GenArgs),
    /// Train a model on random sphere crops.
    Train(TrainArgs),
    /// Voting inference and per-class IoU table.
    Eval(EvalArgs),
    /// Run every finite-difference gradient check.
    Gradcheck,
    /// Time KNN and Poisson-disk subsampling on a generated scene.
    Bench(BenchArgs),
    /// Train and score a grid of block or fusion variants.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Room,
    Desk,
}

impl Preset {
    pub fn spec(self) -> SceneSpec {
        match self {
            Preset::Room => SceneSpec::room(),
            Preset::Desk => SceneSpec::desk(),
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Scene preset; defaults to the scene of the config.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of scenes; scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output directory for `scene_NNN.txt` files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Output directory for `model.ckpt`, `loss.csv` and `config.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Labeled cloud files; defaults to the training split of the config dataset.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub crops_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`. A `config.json` beside it is used when `--config` is absent.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled cloud files; defaults to the held-out split of the config dataset.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Directory for predicted clouds (`pred_NNN.txt`, predicted labels in the label column).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Preset::Room)]
    pub preset: Preset,
    #[arg(long, default_value_t = 16)]
    pub neighbors: usize,
    /// Poisson-disk radius.
    #[arg(long, default_value_t = 0.04)]
    pub radius: f64,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Blocks,
    Fusion,
    All,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum, default_value_t = Grid::All)]
    pub grid: Grid,
    /// Number of training seeds per variant.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Optional JSON dump of every row.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] acpseg::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(acpseg::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// Loads the config file (or defaults) and applies `--seed`.
pub fn run_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.dataset.seed = seed;
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.global.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let g = &cli.global;
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Gradcheck => commands::gradcheck(),
        Command::Bench(a) => commands::bench(g, a),
        Command::Ablate(a) => commands::ablate(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
