//! Argument parsing and subcommand dispatch for the `mbart` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mbart::error::Error;
use mbart::inference::DEFAULT_LEVEL;
use mbart::sampler::sigma_hat;
use mbart::{ChainConfig, Dataset, HyperParams, Mode};

pub mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mbart", version, about = "Bayesian additive regression trees with monotone constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file and save the posterior draws.
    Fit(FitArgs),
    /// Posterior mean and interval at the rows of a CSV file.
    Predict(PredictArgs),
    /// Conditional effect curves of one predictor.
    Effects(EffectsArgs),
    /// One-dimensional cubic simulation, optionally over the prior grid.
    Sim1d(Sim1dArgs),
    /// Five-dimensional simulation: test RMSE per replicate.
    Sim5d(Sim5dArgs),
    /// Repeated train/test splits comparing least squares, BART and mBART.
    Oos(OosArgs),
}

/// Prior and chain settings shared by every fitting subcommand. Unset
/// prior values take the defaults of the chosen mode.
#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub burn: usize,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "grid-points", default_value_t = 64)]
    pub grid_points: usize,
    #[arg(long = "min-leaf", default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long = "max-cuts", default_value_t = 100)]
    pub max_cuts: usize,
}

impl ModelArgs {
    /// Mode defaults, flag overrides, then calibration against `data`.
    pub fn hyperparams(&self, data: &Dataset, mode: Mode) -> mbart::Result<HyperParams> {
        let mut hp = HyperParams::for_mode(mode, self.m, data.constraint_set());
        if let Some(k) = self.k {
            hp.k = k;
        }
        if let Some(nu) = self.nu {
            hp.nu = nu;
        }
        if let Some(q) = self.q {
            hp.q = q;
        }
        if let Some(alpha) = self.alpha {
            hp.alpha = alpha;
        }
        if let Some(beta) = self.beta {
            hp.beta = beta;
        }
        hp.grid_points = self.grid_points;
        hp.min_leaf = self.min_leaf;
        hp.calibrate(sigma_hat(&data.x, &data.y))?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn chain(&self, stream: u64) -> ChainConfig {
        ChainConfig {
            n_burn: self.burn,
            n_draw: self.draws,
            thin: self.thin,
            seed: self.seed,
            stream,
            ..ChainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub y: String,
    /// Comma-separated `column:inc|dec` pairs.
    #[arg(long, default_value = "")]
    pub monotone: String,
    #[arg(long, default_value = "bart")]
    pub mode: Mode,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Draw file written by `fit`.
    #[arg(long = "draw-file")]
    pub draw_file: PathBuf,
    /// CSV holding every predictor column named in the draw file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    #[arg(long = "draw-file")]
    pub draw_file: PathBuf,
    /// CSV supplying the predictor values that grids and frozen rows come from.
    #[arg(long)]
    pub data: PathBuf,
    /// Predictor traced by the curves.
    #[arg(long)]
    pub var: String,
    /// Number of quantiles in the effect grid.
    #[arg(long = "grid-size", default_value_t = 15)]
    pub grid_size: usize,
    /// Number of data rows used as frozen combinations.
    #[arg(long, default_value_t = 10)]
    pub combinations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct Sim1dArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Also run every prior setting of the sensitivity design.
    #[arg(long)]
    pub sensitivity: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct Sim5dArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 0.7, 1.0])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long = "n-train", default_value_t = 500)]
    pub n_train: usize,
    #[arg(long = "n-test", default_value_t = 1000)]
    pub n_test: usize,
    /// Add rows scoring the true function against itself.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OosArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub y: String,
    #[arg(long, default_value = "")]
    pub monotone: String,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long = "train-frac", default_value_t = 0.75)]
    pub train_frac: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Input(_) => EXIT_USAGE,
        Error::Data(_) | Error::DrawFile(_) | Error::Io { .. } | Error::Dimension { .. } => EXIT_DATA,
        Error::Invariant(_) | Error::Infeasible { .. } | Error::Structure(_) => EXIT_INVARIANT,
    }
}

pub fn execute(cli: Cli) -> mbart::Result<()> {
    match cli.command {
        Command::Fit(a) => commands::cmd_fit(&a).map(|_| ()),
        Command::Predict(a) => commands::cmd_predict(&a),
        Command::Effects(a) => commands::cmd_effects(&a),
        Command::Sim1d(a) => commands::cmd_sim1d(&a),
        Command::Sim5d(a) => commands::cmd_sim5d(&a),
        Command::Oos(a) => commands::cmd_oos(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mbart: {e}");
            exit_code(&e)
        }
    }
}
