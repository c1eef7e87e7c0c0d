//! `rarecast`: batch pipelines for rare-event classification.
//!
//! Each subcommand reads CSV inputs, runs one stage of the pipeline and
//! writes its artifacts atomically. See [`Cli`] for the command surface.

pub mod chart;
mod commands;
pub mod output;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;

const RECIPES: &str = "\
Recipes:

  Compare a logistic model fitted without sampling to one fitted on a
  0.2-rebalanced sample, both scored on the same test set:
    rarecast fit-logistic --train train.csv --stepwise --out full.json \\
        --score test.csv --report full
    rarecast rebalance --input train.csv --ratio 0.2 --seed 1 --output train.sample.csv
    rarecast fit-logistic --train train.sample.csv --stepwise --out sampled.json \\
        --score test.csv --report sampled
    rarecast compare --probs-a full/prob.test.csv --labels-a test.csv \\
        --probs-b sampled/prob.test.csv --labels-b test.csv --threshold 0.5 --report cmp

  Evaluate one model on the rebalanced sample, the full training set and the
  test set (one invocation per dataset):
    rarecast fit-forest --train train.sample.csv --seed 7 --out rf.json \\
        --score train.sample.csv --score train.csv --score test.csv --report rf
    rarecast evaluate --probs rf/prob.oob.train.sample.csv --labels train.sample.csv \\
        --threshold 0.5 --report eval/train.sample
    rarecast evaluate --probs rf/prob.train.csv --labels train.csv --threshold 0.5 --report eval/train
    rarecast evaluate --probs rf/prob.test.csv --labels test.csv --threshold 0.5 --report eval/test
";

#[derive(Debug, Parser)]
#[command(
    name = "rarecast",
    version,
    about = "Rare-event classification: rebalancing, logistic and random-forest fits, FAR/TS reports",
    after_long_help = RECIPES
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep every positive row and downsample negatives without replacement.
    Rebalance(RebalanceArgs),
    /// Fit a logistic regression, optionally with stepwise AIC selection.
    FitLogistic(FitLogisticArgs),
    /// Fit a random forest and report its out-of-bag error curve.
    FitForest(FitForestArgs),
    /// Confusion matrix, threshold sweep, ROC, densities and histograms.
    Evaluate(EvaluateArgs),
    /// Overlay the TS-versus-FAR curves of two sets of probabilities.
    Compare(CompareArgs),
    /// Generate a labeled dataset from a logistic model.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RebalanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Minority-to-sampled-majority ratio, in (0, 1].
    #[arg(long, value_parser = parse_ratio)]
    pub ratio: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitLogisticArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Bidirectional stepwise selection by AIC, starting from all features.
    #[arg(long)]
    pub stepwise: bool,
    /// Model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset to score; writes prob.<name>.csv. Repeatable.
    #[arg(long)]
    pub score: Vec<PathBuf>,
    /// Directory for probability files (defaults to the model's directory).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitForestArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 500, value_parser = parse_positive)]
    pub trees: usize,
    #[arg(long)]
    pub seed: u64,
    /// Features tried at each node (default floor(sqrt(p))).
    #[arg(long, value_parser = parse_positive)]
    pub mtry: Option<usize>,
    /// Model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for oob_curve.csv/.svg and probability files (defaults to
    /// the model's directory).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Dataset to score; writes prob.<name>.csv, plus out-of-bag
    /// probabilities of the training set in prob.oob.<train>.csv. Repeatable.
    #[arg(long)]
    pub score: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Probability CSV (single `prob` column).
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub probs: Option<PathBuf>,
    /// Labels: a dataset CSV (its `cv` column) or a one-column file.
    #[arg(long, required_unless_present = "model")]
    pub labels: Option<PathBuf>,
    /// Model JSON from fit-logistic or fit-forest; scores `--data`.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    /// Decision threshold: positive iff probability > threshold.
    #[arg(long, value_parser = parse_unit)]
    pub threshold: f64,
    #[arg(long, default_value_t = 500, value_parser = parse_grid)]
    pub n_points: usize,
    /// FAR ceiling for the reported best operating point.
    #[arg(long, default_value_t = 0.3, value_parser = parse_unit)]
    pub max_far: f64,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub probs_a: PathBuf,
    #[arg(long)]
    pub labels_a: PathBuf,
    #[arg(long)]
    pub probs_b: PathBuf,
    #[arg(long)]
    pub labels_b: PathBuf,
    #[arg(long, default_value = "A")]
    pub name_a: String,
    #[arg(long, default_value = "B")]
    pub name_b: String,
    /// Threshold whose operating point is marked on both curves.
    #[arg(long, value_parser = parse_unit)]
    pub threshold: f64,
    /// Apply the piecewise rescaling to model A's probabilities first.
    #[arg(long)]
    pub rescale_a: bool,
    #[arg(long)]
    pub rescale_b: bool,
    #[arg(long, default_value_t = 500, value_parser = parse_grid)]
    pub n_points: usize,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Schema {
    /// Columns x1..xp.
    Plain,
    /// The 41 satellite cloud-system variable names (requires p = 41).
    Appendix41,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_positive)]
    pub n: usize,
    /// Number of features (41 by default with the appendix41 schema).
    #[arg(long, value_parser = parse_positive)]
    pub p: Option<usize>,
    #[arg(long, value_parser = parse_prevalence)]
    pub prevalence: f64,
    /// Probability of flipping each label.
    #[arg(long, default_value_t = 0.0, value_parser = parse_mislabel)]
    pub mislabel: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Schema::Plain)]
    pub schema: Schema,
    /// Comma-separated slopes, padded with zeros to p
    /// (default 1.5,-1.2,1.0,-0.8,0.6).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coefficients: Option<Vec<f64>>,
}

/// Argument combinations that clap cannot express; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .map_err(|_| format!("'{s}' is not a number"))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("'{s}' is not finite"))
            }
        })
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("ratio must lie in (0, 1], got {v}"))
    }
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

fn parse_prevalence(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("prevalence must lie in (0, 1), got {v}"))
    }
}

fn parse_mislabel(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..0.5).contains(&v) {
        Ok(v)
    } else {
        Err(format!("mislabel rate must lie in [0, 0.5), got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("'{s}' is not a positive integer")),
    }
}

fn parse_grid(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        _ => Err(format!("'{s}': a sweep needs at least 2 points")),
    }
}
