use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use markguard_core::decision::{CostMatrix, ThresholdBand};
use markguard_core::manifest::Split;

#[derive(Debug, Parser)]
#[command(name = "markguard", version, about = "Brand-mark authentication toolkit")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: images, manifest.csv, records.json.
    Synth(SynthArgs),
    /// Train a classifier and write its artifact directory.
    Train(TrainArgs),
    /// Score one manifest split and report the outcome under a band.
    Eval(EvalArgs),
    /// Find the minimum-expected-cost rejection band on a validation set.
    Calibrate(CalibrateArgs),
    /// Accuracy against rejection budget, as a table and an SVG plot.
    Curve(CurveArgs),
    /// Train, calibrate and evaluate several architectures on one manifest.
    Matrix(MatrixArgs),
    /// Run the HTTP authentication service.
    Serve(ServeArgs),
    /// Write the feedback-labeled images of a service store as a manifest.
    ExportFeedback(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator config (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's counterfeit severity.
    #[arg(long)]
    pub severity: Option<f64>,
}

/// Where a validation or test set of scores comes from.
#[derive(Debug, Args)]
pub struct ScoreSource {
    /// Scored set as JSON or `score,label` lines.
    #[arg(long, conflicts_with_all = ["model", "manifest"])]
    pub scores: Option<PathBuf>,
    /// Artifact directory; scores the `--split` of `--manifest`.
    #[arg(long, requires = "manifest")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training config (TOML). Flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Artifact directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Band as `lower,upper`.
    #[arg(long, value_parser = parse_band, conflicts_with = "band_file")]
    pub band: Option<ThresholdBand>,
    /// Band JSON written by `calibrate`. Without either flag the band is
    /// the single threshold 0.5.
    #[arg(long)]
    pub band_file: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    /// `cost_false_genuine,cost_false_counterfeit,cost_reject`.
    #[arg(long, value_parser = parse_costs, default_value = "1,1,0.5")]
    pub costs: CostMatrix,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    /// Comma-separated rejection budgets; defaults to 0%, 1%, ..., 30%.
    #[arg(long, value_parser = parse_budgets)]
    pub budgets: Option<Budgets>,
    /// Two-column table: achieved rejection, accuracy.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG plot of accuracy against rejection.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated architecture names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub arch: Vec<String>,
    #[arg(long, value_parser = parse_costs, default_value = "1,1,0.5")]
    pub costs: CostMatrix,
    /// Training config (TOML) shared by every architecture.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Table report.
    #[arg(long)]
    pub out: PathBuf,
    /// Full rows, including training logs, as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long)]
    pub artifacts: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Maximum image size in bytes.
    #[arg(long, default_value_t = markguard_service::service::DEFAULT_PAYLOAD_LIMIT)]
    pub payload_limit: usize,
    /// Model version to activate at startup.
    #[arg(long)]
    pub model: Option<String>,
    /// Costs used to calibrate the band of an activated model.
    #[arg(long, value_parser = parse_costs, default_value = "1,1,0.5")]
    pub costs: CostMatrix,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Manifest CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Budgets(pub Vec<f64>);

fn parse_costs(s: &str) -> Result<CostMatrix, String> {
    CostMatrix::parse_triple(s).map_err(|e| e.to_string())
}

fn parse_band(s: &str) -> Result<ThresholdBand, String> {
    let (l, u) = s.split_once(',').ok_or("expected lower,upper")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("not a number: {x:?}"));
    ThresholdBand::derived(num(l)?, num(u)?).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|x| x.as_str() == s)
        .ok_or_else(|| format!("expected train, val or test, got {s:?}"))
}

fn parse_budgets(s: &str) -> Result<Budgets, String> {
    let v = s
        .split(',')
        .map(|b| b.trim().parse::<f64>().map_err(|_| format!("not a number: {b:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    let sorted = v.windows(2).all(|w| w[0] <= w[1]);
    if v.is_empty() || !sorted || v.iter().any(|b| !(0.0..1.0).contains(b)) {
        return Err("budgets must be sorted and within [0, 1)".into());
    }
    Ok(Budgets(v))
}
