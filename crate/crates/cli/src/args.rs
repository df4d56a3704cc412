use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetfx::panel::{DEFAULT_CONTROLS, DEFAULT_MODIFIERS};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "hetfx",
    version,
    about = "Heterogeneous trade effects of currency unions: gravity baselines, causal forests and diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a trade panel and write it back in canonical form.
    Ingest(IngestArgs),
    /// Estimate the adoption effect with one estimator.
    Estimate(EstimateArgs),
    /// Robustness and specification diagnostics.
    Diagnose {
        #[command(subcommand)]
        which: Diagnose,
    },
    /// Predicted effects, support and trade paths for pairs that never adopted.
    Counterfactual(CounterfactualArgs),
    /// Synthetic panels with known effects.
    Synth {
        #[command(subcommand)]
        which: Synth,
    },
    /// Refit the forest under many seeds and summarize the spread of the ATE.
    SeedSweep(SeedSweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum Diagnose {
    /// Standardized differences between treated and control rows.
    Balance(BalanceArgs),
    /// Propensity-score overlap.
    Overlap(OverlapArgs),
    /// Event-study coefficients and the joint pre-trend test.
    EventStudy(EventStudyArgs),
    /// Fake adoption years before the real one.
    Placebo(PlaceboArgs),
    /// Drop each country in turn.
    Loo(LooArgs),
    /// Bias-adjusted coefficients under proportional selection.
    Oster(OsterArgs),
    /// Effects of high- and low-effect pairs by period.
    Dynamic(DynamicArgs),
    /// Samples ending in different years.
    Windows(WindowsArgs),
    /// Estimates on intra-eurozone and cross-border subsets.
    Diversion(DiversionArgs),
}

#[derive(Debug, Subcommand)]
pub enum Synth {
    /// Write a synthetic panel and its ground truth.
    Generate(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Directory for result files; created if missing.
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Panel CSV (reporter, partner, year, exports, imports, GDP, population, euro flags).
    #[arg(long)]
    pub input: PathBuf,
    /// `year,ppi` file, needed when the panel has no `ppi` column.
    #[arg(long)]
    pub deflator: Option<PathBuf>,
    /// Years averaged into the pre-adoption trade intensity, e.g. 1995-1998.
    #[arg(long, value_parser = parse_range, default_value = "1995-1998")]
    pub pre_window: (i32, i32),
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct FilterArgs {
    /// Keep pairs where both countries are listed.
    #[arg(long, value_delimiter = ',')]
    pub countries: Vec<String>,
    /// Keep years in this range, e.g. 1999-2008.
    #[arg(long, value_parser = parse_range)]
    pub years: Option<(i32, i32)>,
    /// Drop every pair involving this country.
    #[arg(long)]
    pub drop_country: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForestArgs {
    /// Effect modifiers the causal forest splits on.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MODIFIERS.map(String::from))]
    pub modifiers: Vec<String>,
    /// Controls for the first-stage outcome and treatment models.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CONTROLS.map(String::from))]
    pub controls: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub trees: usize,
    #[arg(long, default_value_t = 200)]
    pub nuisance_trees: usize,
    #[arg(long, default_value_t = 30)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Keep all rows of a pair in the same cross-fitting fold.
    #[arg(long)]
    pub cluster_folds: bool,
    /// Forest variant for diagnostics that rerun the pipeline.
    #[arg(long, value_enum, default_value_t = ForestChoice::Cf)]
    pub forest: ForestChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestChoice {
    /// Causal forest on cross-fitted residuals.
    Cf,
    /// Causal forest with node-level two-way fixed effects.
    Cffe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cf,
    Cffe,
    Twfe,
    Ppml,
    Ppml3,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// With `--method cffe`, run the fixed-effects forest on cross-fitted residuals.
    #[arg(long)]
    pub chain: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BalanceArgs {
    /// Variables to compare; defaults to controls plus pre-adoption trade intensity.
    #[arg(long, value_delimiter = ',')]
    pub vars: Vec<String>,
    /// Restrict the comparison to these years.
    #[arg(long, value_parser = parse_range)]
    pub within: Option<(i32, i32)>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreModel {
    Logit,
    Forest,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OverlapArgs {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CONTROLS.map(String::from))]
    pub predictors: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ScoreModel::Logit, ScoreModel::Forest])]
    pub models: Vec<ScoreModel>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EventStudyArgs {
    /// First event time; earlier years are binned into it.
    #[arg(long, default_value_t = -4, allow_negative_numbers = true)]
    pub k_min: i32,
    /// Last event time; later years are binned into it.
    #[arg(long, default_value_t = 5, allow_negative_numbers = true)]
    pub k_max: i32,
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    pub reference: i32,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlaceboArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1997])]
    pub fake_years: Vec<i32>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LooArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OsterArgs {
    /// Panel to compute the four inputs from; otherwise pass them directly.
    #[arg(long, conflicts_with_all = ["beta_u", "r2_u", "beta_c", "r2_c"])]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub deflator: Option<PathBuf>,
    #[arg(long, value_parser = parse_range, default_value = "1995-1998")]
    pub pre_window: (i32, i32),
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CONTROLS.map(String::from))]
    pub controls: Vec<String>,
    /// Treatment coefficient without controls.
    #[arg(long, requires_all = ["r2_u", "beta_c", "r2_c"], allow_negative_numbers = true)]
    pub beta_u: Option<f64>,
    /// R² without controls.
    #[arg(long)]
    pub r2_u: Option<f64>,
    /// Treatment coefficient with controls.
    #[arg(long, allow_negative_numbers = true)]
    pub beta_c: Option<f64>,
    /// R² with controls.
    #[arg(long)]
    pub r2_c: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0])]
    pub delta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.9, 1.0])]
    pub rmax: Vec<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DynamicArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_range,
          default_values = ["1999-2003", "2004-2008", "2009-2015"])]
    pub periods: Vec<(i32, i32)>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowsArgs {
    /// Last year of each sample, e.g. 2007,2010,2014.
    #[arg(long, value_delimiter = ',', required = true)]
    pub end_years: Vec<i32>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiversionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CounterfactualArgs {
    /// Year the trade indices are normalized to 100; defaults to the end of the pre-window.
    #[arg(long)]
    pub base_year: Option<i32>,
    /// Year the hypothetical adoption starts; defaults to the first observed adoption.
    #[arg(long)]
    pub adoption_year: Option<i32>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpName {
    Null,
    Step,
    Crisis,
}

impl DgpName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DgpName::Null => "null",
            DgpName::Step => "step",
            DgpName::Crisis => "crisis",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = DgpName::Step)]
    pub dgp: DgpName,
    /// JSON data-generating spec; replaces the named one.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Keep a random subset of this many pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Drop random post-window rows down to this many.
    #[arg(long)]
    pub rows: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SeedSweepArgs {
    /// Number of seeds.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Panel to sweep on; without it a synthetic panel is generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub deflator: Option<PathBuf>,
    #[arg(long, value_parser = parse_range, default_value = "1995-1998")]
    pub pre_window: (i32, i32),
    #[arg(long, value_enum, default_value_t = DgpName::Crisis, conflicts_with = "input")]
    pub dgp: DgpName,
    /// Rows of the synthetic panel.
    #[arg(long, default_value_t = 2149, conflicts_with = "input")]
    pub rows: usize,
    /// Seed of the synthetic panel, kept fixed across the sweep.
    #[arg(long, default_value_t = 42, conflicts_with = "input")]
    pub data_seed: u64,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

/// `1995-1998` or a single year.
pub fn parse_range(s: &str) -> Result<(i32, i32), String> {
    let parse = |v: &str| v.trim().parse::<i32>().map_err(|_| format!("`{v}` is not a year"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let y = parse(s)?;
            (y, y)
        }
    };
    if lo > hi {
        return Err(format!("range {s} is reversed"));
    }
    Ok((lo, hi))
}
