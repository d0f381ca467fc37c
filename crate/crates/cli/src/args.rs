use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use windcorr::models::ModelKind;

/// Environment variable naming the default raw-data directory.
pub const DATA_DIR_ENV: &str = "WINDCORR_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "windcorr", version, about = "NWP bias correction for wind power forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a wind farm: SCADA and NWP files.
    Generate(GenerateArgs),
    /// Build forecast samples, the day split and per-turbine normalizers.
    Prepare(PrepareArgs),
    /// Train one model kind per turbine.
    Train(TrainArgs),
    /// Random hyperparameter search for one turbine.
    Search(SearchArgs),
    /// Score trained models on the test partition.
    Evaluate(EvaluateArgs),
    /// Fine-tune trained neural models on newly prepared data.
    Finetune(FinetuneArgs),
    /// Compare keeping, retraining and fine-tuning models on new data.
    CompareStrategies(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Farm, bias and curve settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = DATA_DIR_ENV)]
    pub out: PathBuf,
    /// Overrides the farm rng seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub turbines: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory written by `generate`, or any directory holding
    /// `scada_*.csv` and `nwp.csv`.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data: Option<PathBuf>,
    /// Explicit SCADA files; replaces the files found in `--data`.
    #[arg(long, num_args = 1..)]
    pub scada: Vec<PathBuf>,
    #[arg(long)]
    pub nwp: Option<PathBuf>,
    /// Site description (JSON); defaults to the generator's settings when
    /// `--data` came from `generate`.
    #[arg(long)]
    pub site: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First issue date kept (UTC).
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Last issue date kept (UTC).
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Drop samples whose window crosses into another partition's days.
    #[arg(long)]
    pub strict_boundaries: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub kind: ModelKind,
    #[arg(long)]
    pub prepared: PathBuf,
    /// Models root; artifacts go to `<out>/<kind>/<turbine>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Model config (JSON); defaults to the shipped configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Restrict to these turbines.
    #[arg(long, value_delimiter = ',')]
    pub turbines: Vec<String>,
    /// Turbines trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub kind: ModelKind,
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub turbine: String,
    /// Search space (JSON); defaults to the shipped ranges.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub n_configs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Models root holding one directory per trained model.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Accept models whose normalizer differs from the prepared data's,
    /// e.g. fine-tuned models evaluated on the data they were tuned on.
    #[arg(long)]
    pub model_normalizer: bool,
    /// Seed for the bootstrap standard errors.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Directory of one trained model kind (`<root>/<kind>`).
    #[arg(long)]
    pub model: PathBuf,
    /// Newly prepared data.
    #[arg(long)]
    pub prepared: PathBuf,
    /// Output root; artifacts go to `<out>/<kind>/<turbine>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Fine-tune settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub turbines: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Models root holding the original models (`<root>/<kind>`).
    #[arg(long)]
    pub models: PathBuf,
    /// Newly prepared data.
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "nn,cnn,lstm")]
    pub kinds: Vec<ModelKind>,
    /// Fine-tune settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub turbines: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}
