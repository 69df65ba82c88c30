use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "abx",
    version,
    about = "Exact analysis and simulation of customer-randomized experiments on platforms with finite inventory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Steady-state booking rates, limiting variances and the unbiased-estimator bound.
    Analyze(AnalyzeArgs),
    /// Monte Carlo replications of the experiment and its naive t-test.
    Simulate(SimulateArgs),
    /// Data (and optional plots) for the standard figures.
    Figures(FigureArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    /// Logit booking probabilities.
    Logit,
    /// Sign-inconsistent treatment with zero global effect.
    Example1,
    /// Sign-inconsistent treatment with positive global effect, K = 30.
    Example2,
    /// Mean-field discretization of the logit limits.
    Meanfield,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauArg {
    Linear,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingArg {
    Fixed,
    PerListing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    #[value(name = "appendixC", alias = "appendixc")]
    AppendixC,
}

/// Sample-size range for the false-positive figure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NRange {
    /// 100 to 5000.
    Short,
    /// 1000 to 100000.
    Long,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ScenarioArgs {
    /// Built-in scenario [default: logit, or example1 for fig3 and example2 for fig4]
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioId>,
    /// Model document (JSON) used instead of a built-in scenario.
    #[arg(long, conflicts_with = "scenario")]
    pub model: Option<PathBuf>,
    /// JSON file with default values for any flag; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of listings.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "lambda-bar")]
    pub lambda_bar: Option<f64>,
    /// Holding-rate shape.
    #[arg(long, value_enum)]
    pub tau: Option<TauArg>,
    #[arg(long = "tau-bar")]
    pub tau_bar: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "eps-bar")]
    pub eps_bar: Option<f64>,
    /// Treatment allocation probability.
    #[arg(long)]
    pub a: Option<f64>,
    /// Logit arrival rate: lambda_bar as given, or times K.
    #[arg(long, value_enum)]
    pub arrivals: Option<ScalingArg>,
    /// Logit outside option: eps_bar as given, or times K.
    #[arg(long = "outside-option", value_enum)]
    pub outside_option: Option<ScalingArg>,
    /// Replace the treatment profile by the control profile.
    #[arg(long)]
    pub aa: bool,
    /// Require strictly decreasing booking probabilities.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output formats (comma separated or repeated).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Vec<Format>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Customers per experiment.
    #[arg(long = "N")]
    pub n: Option<u64>,
    /// Replications.
    #[arg(long = "R")]
    pub r: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// State met by the first customer: control, treatment, experiment, or a listing count.
    #[arg(long)]
    pub initial: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct FigureArgs {
    #[arg(value_enum)]
    pub figure: FigureId,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Replications per point (fig3).
    #[arg(long = "R")]
    pub r: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample sizes for fig3.
    #[arg(long = "n-range", value_enum)]
    pub n_range: Option<NRange>,
    /// Listing counts for fig1 (comma separated).
    #[arg(long = "k-grid", value_delimiter = ',')]
    pub k_grid: Vec<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<ScenarioId>,
    pub model: Option<PathBuf>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub lambda_bar: Option<f64>,
    pub tau: Option<TauArg>,
    pub tau_bar: Option<f64>,
    pub v0: Option<f64>,
    pub delta: Option<f64>,
    pub eps_bar: Option<f64>,
    pub a: Option<f64>,
    pub arrivals: Option<ScalingArg>,
    pub outside_option: Option<ScalingArg>,
    pub aa: Option<bool>,
    pub strict: Option<bool>,
    #[serde(rename = "N")]
    pub n: Option<u64>,
    #[serde(rename = "R")]
    pub r: Option<u64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub initial: Option<String>,
    pub n_range: Option<NRange>,
    pub k_grid: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub format: Option<Vec<Format>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }
}

impl ScenarioArgs {
    /// Fills unset flags from the config file. Relative model paths in the
    /// file are taken relative to the file.
    pub fn merge(mut self, file: &FileConfig, config_dir: Option<&Path>) -> ScenarioArgs {
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = file.$f.clone(); } )* };
        }
        fill!(
            scenario,
            k,
            lambda_bar,
            tau,
            tau_bar,
            v0,
            delta,
            eps_bar,
            a,
            arrivals,
            outside_option
        );
        if self.model.is_none() && self.scenario.is_none() {
            self.model = file.model.as_ref().map(|p| match config_dir {
                Some(d) if p.is_relative() => d.join(p),
                _ => p.clone(),
            });
        }
        self.aa |= file.aa.unwrap_or(false);
        self.strict |= file.strict.unwrap_or(false);
        self
    }
}

impl OutputArgs {
    pub fn merge(mut self, file: &FileConfig, default_format: Format) -> OutputArgs {
        if self.out.is_none() {
            self.out = file.out.clone();
        }
        if self.format.is_empty() {
            self.format = file.format.clone().unwrap_or_else(|| vec![default_format]);
        }
        self
    }

    pub fn dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new("."))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.format.contains(&f)
    }
}
