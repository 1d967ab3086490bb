use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Grad-CAM heatmaps and evaluation tooling for binary chest X-ray classifiers.
///
/// Log verbosity is read from CAMKIT_LOG (error|warn|info|debug).
#[derive(Debug, Parser)]
#[command(name = "camkit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a Grad-CAM heatmap from a bundle manifest and render an overlay PNG.
    Cam(CamArgs),
    /// Evaluate a predictions CSV and write a JSON report.
    Metrics(MetricsArgs),
    /// Split a manifest into train/val/test at the patient level.
    Split(SplitArgs),
    /// Report patients that appear in more than one subset.
    Audit(AuditArgs),
    /// Write a class-balanced oversampling plan for the training rows.
    Oversample(OversampleArgs),
    /// Print a focal-loss value and gradient verification table.
    LossCheck(LossCheckArgs),
}

#[derive(Debug, Args)]
pub struct CamArgs {
    /// Bundle manifest (JSON), or a directory of manifests.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Output PNG, or an output directory when --bundle is a directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Output size as HxW, e.g. 224x224. Defaults to the base image size.
    #[arg(long, value_name = "HxW")]
    pub target_size: Option<String>,
    /// Heatmap weight in the blend.
    #[arg(long, default_value_t = camkit::render::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Base image; overrides the bundle's image_path.
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Decision threshold; a score at or above it counts as PNEUMONIA.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub report: PathBuf,
    /// Model name for the text table. Defaults to the predictions file stem.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct PatientRule {
    /// Regex with a `patient` capture group, applied to file names when the
    /// manifest has no patient_id.
    #[arg(long, default_value = camkit::splitter::KERMANY_PATIENT_PATTERN)]
    pub patient_pattern: String,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Split NORMAL-majority and PNEUMONIA-majority patients separately.
    #[arg(long)]
    pub stratified: bool,
    #[command(flatten)]
    pub rule: PatientRule,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Manifest with a subset column; repeat to compare manifests whose rows
    /// carry no subset (each file then counts as its own subset).
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub rule: PatientRule,
}

#[derive(Debug, Args)]
pub struct OversampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub rule: PatientRule,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// Sweep logits -10..10 over gamma {0,1,2,5} and alpha {0.25,0.5,0.75}.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
}
