use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};

use detcal::confidence::binning::BinningScheme;
use detcal::confidence::{
    auprc, brier, dece, ece, fit_beta, fit_beta_dependent, fit_histogram, fit_logistic, fit_logistic_dependent,
    fit_svi, mce, nll_bernoulli, reliability, BayesianBase, BayesianCalibrator, ConfidenceCalibrator, SviConfig,
};
use detcal::io::{
    detections_to_jsonl, ground_truth_to_jsonl, group_frames, read_detections, read_ground_truth, read_tracks,
    tracks_to_jsonl, write_atomic, Header, ModelFile, ParseMode, RecordFormat,
};
use detcal::model::{build_dataset, Detection, Feature, GroundTruthObject, ImageSize, MatchedDataset};
use detcal::mot::evaluate;
use detcal::optim::OptimizerConfig;
use detcal::regression::gp_models::{estimate_covariance, fit_gp_normal_joint, fit_gp_univariate, GpFamily};
use detcal::regression::isotonic::fit_isotonic;
use detcal::regression::metrics::{
    interval_mpiw, interval_picp, m_qce, mean_m_qce, pinball, predictions, regression_report, tau_grid, uncalibrated,
    DimMetrics,
};
use detcal::regression::variance::fit_variance_scaling;
use detcal::regression::{GpConfig, RegressionCalibrator, RegressionDataset};
use detcal::synthetic::{
    generate_detection_dataset_with, generate_tracking_sequence, BetaMixture, BoxSampler, DetectorDistortion,
    ScenarioConfig,
};
use detcal::tracking::{run_tracker, TrackerConfig};

use crate::{ConfMethod, FeatureSet, RegMethod, ReportFormat, SynthMode};

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    distortion: DetectorDistortion,
    samples: usize,
    sampler: BoxSampler,
    scenario: ScenarioConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            distortion: DetectorDistortion::default(),
            samples: 10_000,
            sampler: BoxSampler::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn synth(mode: SynthMode, config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let (dets, gts, image) = match mode {
        SynthMode::Dataset => {
            let prior = BetaMixture::new(detcal::synthetic::prior::default_confidence_components())?;
            let ds = generate_detection_dataset_with(&cfg.distortion, &cfg.sampler, &prior, cfg.samples, seed)?;
            let mut dets = Vec::with_capacity(ds.len());
            let mut gts = Vec::new();
            for (i, s) in ds.samples.iter().enumerate() {
                let frame_id = i as u64;
                dets.push(Detection {
                    label: s.label,
                    confidence: s.confidence,
                    bbox: s.bbox,
                    variances: s.variances,
                    frame_id,
                    detection_id: 0,
                });
                if let Some(g) = s.gt_box {
                    gts.push(GroundTruthObject { label: s.label, bbox: g, frame_id, object_id: frame_id + 1 });
                }
            }
            (dets, gts, cfg.sampler.image)
        }
        SynthMode::Sequence => {
            let frames = generate_tracking_sequence(&cfg.scenario, &cfg.distortion, seed)?;
            let dets = frames.iter().flat_map(|f| f.detections.clone()).collect();
            let gts = frames.iter().flat_map(|f| f.ground_truths.clone()).collect();
            (dets, gts, cfg.scenario.image_size)
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let dh = Header::new(RecordFormat::Detections, Some(image));
    let gh = Header::new(RecordFormat::GroundTruth, Some(image));
    write_atomic(&out.join("detections.jsonl"), detections_to_jsonl(&dh, &dets)?.as_bytes())?;
    write_atomic(&out.join("ground_truth.jsonl"), ground_truth_to_jsonl(&gh, &gts)?.as_bytes())?;
    eprintln!("wrote {} detections and {} ground-truth boxes to {}", dets.len(), gts.len(), out.display());
    Ok(())
}

pub struct DataOptions {
    pub data: PathBuf,
    pub gt: PathBuf,
    pub iou: f64,
    pub min_confidence: f64,
    pub mode: ParseMode,
}

fn load_matched(opts: &DataOptions) -> Result<MatchedDataset> {
    let dets = read_detections(&opts.data, opts.mode).with_context(|| format!("reading {}", opts.data.display()))?;
    let gts = read_ground_truth(&opts.gt, opts.mode).with_context(|| format!("reading {}", opts.gt.display()))?;
    for w in dets.warnings.iter().chain(&gts.warnings) {
        eprintln!("warning: {w}");
    }
    let image: Option<ImageSize> = dets.header.image_size.or(gts.header.image_size);
    let frames = group_frames(&dets.records, &gts.records);
    Ok(build_dataset(&frames, opts.iou, opts.min_confidence, image)?)
}

pub struct ConfOptions {
    pub method: ConfMethod,
    pub features: FeatureSet,
    pub dependent: bool,
    pub bayesian: bool,
    pub bins: Option<usize>,
    pub seed: u64,
    pub draws: usize,
}

pub fn calibrate_confidence(o: &ConfOptions, data: &DataOptions, model_out: &Path) -> Result<()> {
    let ds = load_matched(data)?;
    let features: Vec<Feature> = match o.features {
        FeatureSet::Conf => vec![Feature::Confidence],
        FeatureSet::ConfBox => Feature::ALL.to_vec(),
    };
    if o.dependent && features.len() == 1 {
        bail!("--dependent true requires --features conf+box");
    }
    let opt = OptimizerConfig::default();
    let cal = if o.bayesian {
        let base = match (o.method, features.len() > 1, o.dependent) {
            (ConfMethod::Hist, _, _) => bail!("histogram binning has no Bayesian variant"),
            (ConfMethod::Logistic, false, _) => BayesianBase::Logistic,
            (ConfMethod::Logistic, true, false) => BayesianBase::LogisticMvIndep,
            (ConfMethod::Logistic, true, true) => BayesianBase::LogisticMvDep,
            (ConfMethod::Beta, false, _) => BayesianBase::Beta,
            (ConfMethod::Beta, true, false) => BayesianBase::BetaMvIndep,
            (ConfMethod::Beta, true, true) => bail!("dependent beta calibration has no Bayesian variant"),
        };
        let fit = fit_svi(base, &ds, &features, &SviConfig { seed: o.seed, ..SviConfig::default() })?;
        ConfidenceCalibrator::Bayesian(BayesianCalibrator { posterior: fit.posterior, draws: o.draws, seed: o.seed })
    } else {
        match o.method {
            ConfMethod::Hist => {
                if o.dependent {
                    bail!("--dependent applies to logistic and beta calibration only");
                }
                let scheme = match o.bins {
                    Some(b) => BinningScheme::uniform(features.len(), b, 0),
                    None => BinningScheme::default_for(features.len()),
                };
                ConfidenceCalibrator::Histogram(fit_histogram(&ds, &features, &scheme, false)?)
            }
            ConfMethod::Logistic if o.dependent => {
                ConfidenceCalibrator::Scaling(fit_logistic_dependent(&ds, &features, &opt)?)
            }
            ConfMethod::Logistic => ConfidenceCalibrator::Scaling(fit_logistic(&ds, &features, &opt)?),
            ConfMethod::Beta if o.dependent => ConfidenceCalibrator::Scaling(fit_beta_dependent(&ds, &features, &opt)?),
            ConfMethod::Beta => ConfidenceCalibrator::Scaling(fit_beta(&ds, &features, &opt)?),
        }
    };
    ModelFile::Confidence(cal).save(model_out)?;
    eprintln!("fitted on {} detections, model written to {}", ds.len(), model_out.display());
    Ok(())
}

pub fn calibrate_regression(
    method: RegMethod,
    seed: u64,
    max_points: Option<usize>,
    data: &DataOptions,
    model_out: &Path,
) -> Result<()> {
    let ds = RegressionDataset::from_matched(&load_matched(data)?)?;
    let mut gp = GpConfig { seed, ..GpConfig::default() };
    if let Some(m) = max_points {
        gp.max_points = m;
    }
    let cal = match method {
        RegMethod::Isotonic => RegressionCalibrator::Isotonic(fit_isotonic(&ds)?),
        RegMethod::VarScaling => RegressionCalibrator::VarianceScaling(fit_variance_scaling(&ds)?),
        RegMethod::GpNormal => RegressionCalibrator::Gp(fit_gp_univariate(&ds, GpFamily::Normal, &gp)?.0),
        RegMethod::GpCauchy => RegressionCalibrator::Gp(fit_gp_univariate(&ds, GpFamily::Cauchy, &gp)?.0),
        RegMethod::GpBeta => RegressionCalibrator::Gp(fit_gp_univariate(&ds, GpFamily::Beta, &gp)?.0),
        RegMethod::GpNormalMv => RegressionCalibrator::Covariance(estimate_covariance(&ds, &gp)?),
        RegMethod::GpNormalJoint => RegressionCalibrator::GpJoint(fit_gp_normal_joint(&ds, &gp)?),
    };
    ModelFile::Regression(cal).save(model_out)?;
    eprintln!("fitted on {} matched boxes, model written to {}", ds.len(), model_out.display());
    Ok(())
}

const CONFIDENCE_METRICS: &[&str] = &["ece", "mce", "dece", "brier", "nll", "auprc", "reliability"];
const REGRESSION_METRICS: &[&str] = &["nll", "pinball", "c_qce", "m_qce", "uce", "ence", "picp", "mpiw"];

#[derive(Default)]
struct Report {
    json: Map<String, Value>,
    rows: Vec<[String; 4]>,
}

impl Report {
    fn add(&mut self, section: &str, metric: &str, param: Option<String>, value: Option<f64>) {
        let v = value.map_or(Value::Null, Value::from);
        let sec = self.json.entry(section).or_insert_with(|| Value::Object(Map::new()));
        let Value::Object(sec) = sec else { unreachable!() };
        match &param {
            None => {
                sec.insert(metric.into(), v);
            }
            Some(p) => {
                let m = sec.entry(metric).or_insert_with(|| Value::Object(Map::new()));
                if let Value::Object(m) = m {
                    m.insert(p.clone(), v);
                }
            }
        }
        self.rows.push([
            section.into(),
            metric.into(),
            param.unwrap_or_default(),
            value.map_or_else(String::new, |x| format!("{x}")),
        ]);
    }

    fn render(&self, format: ReportFormat) -> Result<String> {
        Ok(match format {
            ReportFormat::Json => serde_json::to_string_pretty(&Value::Object(self.json.clone()))? + "\n",
            ReportFormat::Csv => {
                let mut s = String::from("section,metric,param,value\n");
                for r in &self.rows {
                    s.push_str(&r.join(","));
                    s.push('\n');
                }
                s
            }
            ReportFormat::Text => {
                let mut w = [0usize; 4];
                for r in &self.rows {
                    for (k, c) in r.iter().enumerate() {
                        w[k] = w[k].max(c.len());
                    }
                }
                let mut s = String::new();
                for r in &self.rows {
                    s.push_str(&format!(
                        "{:<a$}  {:<b$}  {:<c$}  {:>d$}\n",
                        r[0],
                        r[1],
                        r[2],
                        r[3],
                        a = w[0],
                        b = w[1],
                        c = w[2],
                        d = w[3]
                    ));
                }
                s
            }
        })
    }
}

fn wants(selected: &[String], name: &str) -> bool {
    selected.is_empty() || selected.iter().any(|s| s == name)
}

fn add_dim_metrics(r: &mut Report, selected: &[String], param: &str, m: &DimMetrics) {
    let p = || Some(param.to_string());
    if wants(selected, "nll") {
        r.add("regression", "nll", p(), Some(m.nll));
    }
    if wants(selected, "pinball") {
        r.add("regression", "mean_pinball", p(), Some(m.mean_pinball));
    }
    if wants(selected, "c_qce") {
        r.add("regression", "mean_c_qce", p(), m.mean_c_qce);
    }
    if wants(selected, "uce") {
        r.add("regression", "uce", p(), m.uce);
    }
    if wants(selected, "ence") {
        r.add("regression", "ence", p(), m.ence);
    }
    if wants(selected, "picp") {
        r.add("regression", "picp_90", p(), Some(m.picp_90));
    }
    if wants(selected, "mpiw") {
        r.add("regression", "mpiw_90", p(), Some(m.mpiw_90));
    }
}

pub fn eval_calibration(
    model: Option<&Path>,
    data: &DataOptions,
    metrics: &[String],
    bins: usize,
    taus: &[f64],
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<()> {
    for m in metrics {
        if !CONFIDENCE_METRICS.contains(&m.as_str()) && !REGRESSION_METRICS.contains(&m.as_str()) {
            bail!("unknown metric '{m}'");
        }
    }
    if bins == 0 {
        bail!("--bins must be positive");
    }
    let taus: Vec<f64> = if taus.is_empty() { tau_grid() } else { taus.to_vec() };
    if taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        bail!("quantile levels must lie in (0, 1)");
    }
    let model = model.map(ModelFile::load).transpose()?;
    let ds = load_matched(data)?;
    let mut r = Report::default();
    let do_conf = !matches!(model, Some(ModelFile::Regression(_))) && metrics.iter().all(|m| m != "__none__");
    if do_conf && (metrics.is_empty() || metrics.iter().any(|m| CONFIDENCE_METRICS.contains(&m.as_str()))) {
        let (cds, features) = match &model {
            Some(ModelFile::Confidence(c)) => (c.calibrate_dataset(&ds)?, c.features().to_vec()),
            _ => (ds.clone(), vec![Feature::Confidence]),
        };
        let s = "confidence";
        if wants(metrics, "ece") {
            r.add(s, "ece", None, Some(ece(&cds, bins)?));
        }
        if wants(metrics, "mce") {
            r.add(s, "mce", None, Some(mce(&cds, bins)?));
        }
        if wants(metrics, "dece") {
            r.add(s, "dece", None, dece(&cds, &features, &BinningScheme::default_for(features.len())).ok());
        }
        if wants(metrics, "brier") {
            r.add(s, "brier", None, Some(brier(&cds)?));
        }
        if wants(metrics, "nll") {
            r.add(s, "nll", None, Some(nll_bernoulli(&cds)?));
        }
        if wants(metrics, "auprc") {
            r.add(s, "auprc", None, Some(auprc(&cds)?));
        }
        if wants(metrics, "reliability") {
            for b in reliability(&cds, &[Feature::Confidence], &BinningScheme::uniform(1, bins, 0))? {
                let p = || Some(format!("bin{}", b.bin_index));
                r.add(s, "reliability_count", p(), Some(b.count as f64));
                r.add(s, "reliability_confidence", p(), Some(b.mean_conf));
                r.add(s, "reliability_precision", p(), Some(b.precision));
            }
        }
    }

    let do_reg = !matches!(model, Some(ModelFile::Confidence(_)))
        && (metrics.is_empty() || metrics.iter().any(|m| REGRESSION_METRICS.contains(&m.as_str())));
    if do_reg {
        let rds = match RegressionDataset::from_matched(&ds) {
            Ok(x) if !x.is_empty() => Some(x),
            _ => None,
        };
        match (rds, &model) {
            (None, Some(ModelFile::Regression(_))) => bail!("no matched detections with variances to evaluate"),
            (None, _) => {}
            (Some(rds), model) => {
                let reg = match model {
                    Some(ModelFile::Regression(m)) => Some(m),
                    _ => None,
                };
                let (dists, gts) = match reg {
                    Some(m) => (m.distributions(&rds)?, (0..rds.dims).map(|d| rds.column(d).2).collect()),
                    None => uncalibrated(&rds),
                };
                let report = regression_report(&dists, &gts, bins)?;
                for (d, m) in report.per_dim.iter().enumerate() {
                    add_dim_metrics(&mut r, metrics, &detcal::regression::metrics::dim_name(d, rds.dims), m);
                }
                add_dim_metrics(&mut r, metrics, "mean", &report.mean);
                let dims = dists.len() as f64;
                for &tau in &taus {
                    let p = || Some(format!("{tau}"));
                    let mut acc = [0.0; 3];
                    for (dd, g) in dists.iter().zip(&gts) {
                        acc[0] += pinball(dd, g, tau)? / dims;
                        acc[1] += interval_picp(dd, g, tau)? / dims;
                        acc[2] += interval_mpiw(dd, tau)? / dims;
                    }
                    if wants(metrics, "pinball") {
                        r.add("regression", "pinball", p(), Some(acc[0]));
                    }
                    if wants(metrics, "picp") {
                        r.add("regression", "picp", p(), Some(acc[1]));
                    }
                    if wants(metrics, "mpiw") {
                        r.add("regression", "mpiw", p(), Some(acc[2]));
                    }
                }
                if wants(metrics, "m_qce") {
                    let preds = match reg {
                        Some(m) => m.predictions(&rds).ok(),
                        None => Some(predictions(&rds)),
                    };
                    match preds {
                        Some(p) => {
                            for &tau in &taus {
                                r.add("regression", "m_qce", Some(format!("{tau}")), Some(m_qce(&p, tau)?));
                            }
                            r.add("regression", "mean_m_qce", None, Some(mean_m_qce(&p)?));
                        }
                        None => r.add("regression", "mean_m_qce", None, None),
                    }
                }
            }
        }
    }
    if r.rows.is_empty() {
        bail!("no applicable metrics for this model and data");
    }
    emit(&r.render(format)?, out)
}

pub fn track(
    detections: &Path,
    conf_model: Option<&Path>,
    reg_model: Option<&Path>,
    tracker_config: Option<&Path>,
    out: &Path,
    mode: ParseMode,
) -> Result<()> {
    let dets = read_detections(detections, mode).with_context(|| format!("reading {}", detections.display()))?;
    for w in &dets.warnings {
        eprintln!("warning: {w}");
    }
    let mut cfg: TrackerConfig = match tracker_config {
        Some(p) => read_json(p)?,
        None => TrackerConfig::default(),
    };
    if cfg.image_size.is_none() {
        cfg.image_size = dets.header.image_size;
    }
    let conf = conf_model.map(detcal::io::load_confidence_model).transpose()?;
    let reg = reg_model.map(detcal::io::load_regression_model).transpose()?;
    let frames = group_frames(&dets.records, &[]);
    let run = run_tracker(&frames, &cfg, conf.as_ref(), reg.as_ref())?;
    let header =
        Header { format: RecordFormat::Tracks, coordinates: dets.header.coordinates, image_size: cfg.image_size };
    write_atomic(out, tracks_to_jsonl(&header, &run.records)?.as_bytes())?;
    eprintln!(
        "{} frames, {} track records, mean NIS {}",
        frames.len(),
        run.records.len(),
        run.mean_nis().map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
    );
    Ok(())
}

pub fn eval_mot(
    tracks: &Path,
    gt: &Path,
    iou: f64,
    format: ReportFormat,
    out: Option<&Path>,
    mode: ParseMode,
) -> Result<()> {
    let t = read_tracks(tracks, mode).with_context(|| format!("reading {}", tracks.display()))?;
    let g = read_ground_truth(gt, mode).with_context(|| format!("reading {}", gt.display()))?;
    for w in t.warnings.iter().chain(&g.warnings) {
        eprintln!("warning: {w}");
    }
    let report = evaluate(&g.records, &t.records, iou)?;
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
        ReportFormat::Text => report.to_text(),
        ReportFormat::Csv => {
            let mut s = String::from("metric,value\n");
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            for (k, v) in [
                ("mota", report.mota.to_string()),
                ("motp_distance", opt(report.motp_distance)),
                ("motp_iou", opt(report.motp_iou)),
                ("idf1", report.idf1.to_string()),
                ("fp_per_frame", report.fp_per_frame.to_string()),
                ("fn_per_frame", report.fn_per_frame.to_string()),
                ("idsw_per_object", report.idsw_per_object.to_string()),
                ("mt", report.mt.to_string()),
                ("pt", report.pt.to_string()),
                ("ml", report.ml.to_string()),
            ] {
                s.push_str(&format!("{k},{v}\n"));
            }
            s
        }
    };
    emit(&text, out)
}
