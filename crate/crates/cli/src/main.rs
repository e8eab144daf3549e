use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "detcal", version, about = "Calibrate detector uncertainties and track with them")]
struct Cli {
    /// Warn about unknown JSONL fields instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    Dataset,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConfMethod {
    Hist,
    Logistic,
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureSet {
    #[value(name = "conf")]
    Conf,
    #[value(name = "conf+box")]
    ConfBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegMethod {
    Isotonic,
    VarScaling,
    GpNormal,
    GpCauchy,
    GpBeta,
    GpNormalMv,
    GpNormalJoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic detection dataset or tracking sequence.
    Synth {
        #[arg(long, value_enum)]
        mode: SynthMode,
        /// JSON generator configuration; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for detections.jsonl and ground_truth.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a confidence calibrator.
    CalibrateConfidence {
        #[arg(long, value_enum)]
        method: ConfMethod,
        #[arg(long, value_enum, default_value = "conf")]
        features: FeatureSet,
        #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
        dependent: bool,
        #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
        bayesian: bool,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = detcal::model::DEFAULT_MIN_CONFIDENCE)]
        min_confidence: f64,
        /// Bins per dimension for histogram binning.
        #[arg(long)]
        bins: Option<usize>,
        /// Seed and predictive draw count of Bayesian calibrators.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Fit a spatial-uncertainty calibrator.
    CalibrateRegression {
        #[arg(long, value_enum)]
        method: RegMethod,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = detcal::model::DEFAULT_MIN_CONFIDENCE)]
        min_confidence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training points kept by GP methods.
        #[arg(long)]
        max_points: Option<usize>,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Compute calibration metrics, optionally after applying a model.
    EvalCalibration {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated metric names; all applicable metrics by default.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Comma-separated quantile levels for pinball loss and intervals.
        #[arg(long, value_delimiter = ',')]
        tau_grid: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = detcal::model::DEFAULT_MIN_CONFIDENCE)]
        min_confidence: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the tracker over a detection stream.
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        conf_model: Option<PathBuf>,
        #[arg(long)]
        reg_model: Option<PathBuf>,
        #[arg(long)]
        tracker_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a track stream with CLEAR-MOT and identity metrics.
    EvalMot {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = if cli.lenient { detcal::io::ParseMode::Lenient } else { detcal::io::ParseMode::Strict };
    let result = match cli.command {
        Command::Synth { mode: m, config, seed, out } => commands::synth(m, config.as_deref(), seed, &out),
        Command::CalibrateConfidence {
            method,
            features,
            dependent,
            bayesian,
            train,
            gt,
            iou,
            min_confidence,
            bins,
            seed,
            draws,
            model_out,
        } => commands::calibrate_confidence(
            &commands::ConfOptions { method, features, dependent, bayesian, bins, seed, draws },
            &commands::DataOptions { data: train, gt, iou, min_confidence, mode },
            &model_out,
        ),
        Command::CalibrateRegression { method, train, gt, iou, min_confidence, seed, max_points, model_out } => {
            commands::calibrate_regression(
                method,
                seed,
                max_points,
                &commands::DataOptions { data: train, gt, iou, min_confidence, mode },
                &model_out,
            )
        }
        Command::EvalCalibration { model, data, gt, metrics, bins, tau_grid, iou, min_confidence, format, out } => {
            commands::eval_calibration(
                model.as_deref(),
                &commands::DataOptions { data, gt, iou, min_confidence, mode },
                &metrics,
                bins,
                &tau_grid,
                format,
                out.as_deref(),
            )
        }
        Command::Track { detections, conf_model, reg_model, tracker_config, out } => commands::track(
            &detections,
            conf_model.as_deref(),
            reg_model.as_deref(),
            tracker_config.as_deref(),
            &out,
            mode,
        ),
        Command::EvalMot { tracks, gt, iou, format, out } => {
            commands::eval_mot(&tracks, &gt, iou, format, out.as_deref(), mode)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("detcal: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
