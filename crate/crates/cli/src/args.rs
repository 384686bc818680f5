use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lifepred::baseline::RidgeFeature;
use lifepred::dataset::LabelTransform;
use lifepred::hbm::SamplerScheme;
use serde::de::DeserializeOwned;

/// Early-life battery lifetime prediction pipeline.
#[derive(Debug, Parser)]
#[command(name = "lifepred", version, about)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Log progress to stderr (-vv for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic fleet from the hierarchical generative model.
    Synth(SynthArgs),
    /// Compute g and F1-F3 from per-cycle discharge data.
    Extract(ExtractArgs),
    /// Group cells by g with size-constrained K-means.
    Cluster(ClusterCmd),
    /// Fit the hierarchical model and write a posterior bundle.
    Fit(FitArgs),
    /// Predictive distributions for cells from a posterior bundle.
    Predict(PredictArgs),
    /// Repeated k-fold cross-validation of several models.
    Evaluate(EvaluateArgs),
    /// Summarize artifacts that share one manifest.
    Report(ReportArgs),
    /// Fit the pooled ridge baseline.
    Baseline(BaselineArgs),
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn parse_transform(s: &str) -> Result<LabelTransform, String> {
    s.parse()
}

pub fn parse_scheme(s: &str) -> Result<SamplerScheme, String> {
    serde_value(s)
}

pub fn parse_feature(s: &str) -> Result<RidgeFeature, String> {
    s.parse().map_err(|e: lifepred::BaselineError| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    /// Number of usage groups.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Cells per group.
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of `<id>.meta.json` and `<id>.cycles.csv` pairs.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub vmin: Option<f64>,
    #[arg(long)]
    pub vmax: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Floor applied before taking log10 of F1 and F2.
    #[arg(long)]
    pub log_clamp: Option<f64>,
    /// Skip cells lacking cycle 2, 10 or 100 instead of failing.
    #[arg(long)]
    pub skip_incomplete: bool,
}

#[derive(Debug, Args, Default)]
pub struct ClusterFlags {
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClusterCmd {
    /// Feature CSV.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub cluster: ClusterFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Default)]
pub struct HbmFlags {
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// collapsed or joint.
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<SamplerScheme>,
    /// Level-1 noise scale (fixed unless --sigma-y-prior is given).
    #[arg(long)]
    pub sigma_y: Option<f64>,
    /// Half-normal prior scale that makes σ_y a sampled parameter.
    #[arg(long)]
    pub sigma_y_prior: Option<f64>,
    /// Prior standard deviation of each hyper-coefficient.
    #[arg(long)]
    pub hyper_prior_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub cluster: ClusterFlags,
    #[command(flatten)]
    pub hbm: HbmFlags,
    /// identity or log10.
    #[arg(long, value_parser = parse_transform)]
    pub label_transform: Option<LabelTransform>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Bundle written by `fit`.
    #[arg(long, value_name = "FILE")]
    pub posterior: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Coverage of the reported central interval.
    #[arg(long)]
    pub level: Option<f64>,
    /// Treat every cell as a member of an unseen group at its own g.
    #[arg(long)]
    pub new_groups: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Feature columns, e.g. f1,f2,f3,g.
    #[arg(long, value_delimiter = ',', value_parser = parse_feature)]
    pub features: Option<Vec<RidgeFeature>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub inner_folds: Option<usize>,
    #[arg(long, value_parser = parse_transform)]
    pub label_transform: Option<LabelTransform>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Models to compare: hbm, ridge3, ridge4, mean.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Model the improvement percentages are measured against.
    #[arg(long)]
    pub reference: Option<String>,
    /// Number of usage clusters fitted in each fold.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[command(flatten)]
    pub cluster: ClusterFlags,
    #[command(flatten)]
    pub hbm: HbmFlags,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub inner_folds: Option<usize>,
    #[arg(long, value_parser = parse_transform)]
    pub label_transform: Option<LabelTransform>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Artifact files or directories; every artifact must carry the same manifest hash.
    #[arg(long, value_name = "PATH", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Write `summary.md` here instead of printing it.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
