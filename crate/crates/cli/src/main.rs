mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rffs::data::{Primitive, DEFAULT_MIN_COUNT};
use rffs::layers::Aggregation;
use rffs::tensor::LossReduction;

/// Point-cloud classification: block partitioning, graph inspection,
/// training, prediction and evaluation.
#[derive(Parser, Debug)]
#[command(name = "rffs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth(SynthArgs),
    /// Partition a scene into square blocks.
    Blocks(BlocksArgs),
    /// Dump the point hierarchy and fusion graphs of one block as JSON.
    Graphs(GraphsArgs),
    /// Train a model on a directory of blocks.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on labeled blocks.
    Eval(EvalArgs),
    /// Write per-point predictions for one point file.
    Predict(PredictArgs),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Approximate point count (ignored when --density is given).
    #[arg(long, default_value_t = 4096)]
    pub points: usize,
    /// Side length of the square scene, meters.
    #[arg(long, default_value_t = 30.0, value_parser = positive_f64)]
    pub extent: f64,
    /// Points per square meter.
    #[arg(long, value_parser = positive_f64)]
    pub density: Option<f64>,
    /// Primitives to place; class ids follow this order.
    #[arg(long, value_delimiter = ',', default_value = "ground,building,pole,wire,vegetation")]
    pub classes: Vec<Primitive>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BlocksArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column schema when the file has no `#cols:` header.
    #[arg(long)]
    pub columns: Option<String>,
    /// Block side length, meters.
    #[arg(long, default_value_t = 30.0, value_parser = positive_f64)]
    pub block_size: f64,
    /// Blocks with fewer points are merged into a neighbor.
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    pub min_count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct GraphsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub columns: Option<String>,
    /// Neighbors of the point and mapping graphs.
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub k: usize,
    /// Sparse sampling step of the dilated graphs.
    #[arg(long, default_value_t = 4, value_parser = positive_usize)]
    pub delta: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub dilations: Vec<usize>,
    /// Neighbors per dilated and annular neighborhood.
    #[arg(long, default_value_t = 16, value_parser = positive_usize)]
    pub fusion_k: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,4,2")]
    pub ratios: Vec<usize>,
    /// Sample the block to this many points first.
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of block files (`.txt`, `.pts`, `.xyz`).
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Falls back to the config file, then RFFS_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Defaults to the checkpoint path with a `.metrics.jsonl` extension.
    #[arg(long)]
    pub metrics_log: Option<PathBuf>,
    /// Continue training from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Disable dense connections inside the fusion branches.
    #[arg(long)]
    pub no_dense: bool,
    /// Supervise only the finest level.
    #[arg(long)]
    pub no_mrfa: bool,
    #[arg(long, value_delimiter = ',')]
    pub dilations: Option<Vec<usize>>,
    /// Preset name or one comma-separated weight per level.
    #[arg(long)]
    pub loss_weights: Option<String>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub loss_reduction: Option<LossReduction>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub class_names: Option<Vec<String>>,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub fusion_k: Option<usize>,
    /// Print the merged configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A labeled point file or a directory of them.
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics report; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Defaults to the report path with a `.confusion.csv` extension.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub columns: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub columns: Option<String>,
    /// Output lines are `x y z true pred`, `-1` for unknown truth.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Blocks(a) => commands::blocks(&a),
        Command::Graphs(a) => commands::graphs(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
