use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::existence::{existence_miss_update, existence_predict, existence_update, ExistenceConfig};
use super::hungarian::hungarian;
use super::kalman::{GaussianState, KalmanConfig, OBS_DIM};
use crate::confidence::ConfidenceCalibrator;
use crate::error::{Error, Result};
use crate::model::{extract_features, iou, BoundingBox, Detection, Frame, ImageSize};
use crate::regression::RegressionCalibrator;
use crate::special::chi2_quantile;

/// Cost assigned to gated-out pairs.
pub const FORBIDDEN: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    #[serde(default)]
    pub kalman: KalmanConfig,
    #[serde(default)]
    pub existence: ExistenceConfig,
    /// Needed when a confidence calibrator uses box features on pixel boxes.
    #[serde(default)]
    pub image_size: Option<ImageSize>,
    /// Observation standard deviation, as a fraction of the box extent, for
    /// detections without variances.
    #[serde(default = "default_fallback_std")]
    pub fallback_std: f64,
    /// Detections with raw confidence below this are ignored.
    #[serde(default)]
    pub min_confidence: f64,
    /// An unmatched detection overlapping an existing same-label track with
    /// at least this IoU does not spawn a track. Values above 1 disable it.
    #[serde(default = "default_spawn_suppression")]
    pub spawn_suppression_iou: f64,
    /// Tracks and detections left unmatched by the NIS gate are paired by
    /// IoU at or above this value. Values above 1 disable the second stage.
    #[serde(default = "default_fallback_iou")]
    pub fallback_iou: f64,
}

fn default_fallback_iou() -> f64 {
    0.5
}

fn default_spawn_suppression() -> f64 {
    0.5
}

fn default_fallback_std() -> f64 {
    0.05
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            kalman: KalmanConfig::default(),
            existence: ExistenceConfig::default(),
            image_size: None,
            fallback_std: default_fallback_std(),
            min_confidence: 0.0,
            spawn_suppression_iou: default_spawn_suppression(),
            fallback_iou: default_fallback_iou(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.kalman.validate()?;
        self.existence.validate()?;
        if !(self.fallback_std > 0.0) {
            return Err(Error::InvalidConfig("fallback_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub label: u32,
    pub state: GaussianState,
    pub existence: f64,
    pub age: u64,
    pub frames_since_update: u64,
}

/// A detection prepared for filtering: calibrated confidence and
/// observation covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub detection_id: u64,
    pub label: u32,
    pub z: [f64; 4],
    pub r: DMatrix<f64>,
    pub confidence: f64,
}

/// One emitted track box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub frame_id: u64,
    pub track_id: u64,
    pub label: u32,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub existence: f64,
    /// Diagonal of `H P Hᵀ`.
    #[serde(with = "crate::io::xywh")]
    pub var: [f64; 4],
}

/// Row-to-column assignment after gating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Optimal assignment on `cost`; entries above `threshold` (or non-finite)
/// are never assigned.
pub fn assign_gated(cost: &[Vec<f64>], threshold: f64) -> Association {
    assign_gated_cols(cost, cost.first().map_or(0, Vec::len), threshold)
}

fn assign_gated_cols(cost: &[Vec<f64>], cols: usize, threshold: f64) -> Association {
    let rows = cost.len();
    let gated: Vec<Vec<f64>> = cost
        .iter()
        .map(|r| r.iter().map(|&c| if c.is_finite() && c <= threshold { c } else { FORBIDDEN }).collect())
        .collect();
    let assignment = hungarian(&gated);
    let mut out = Association::default();
    let mut col_used = vec![false; cols];
    for (i, a) in assignment.into_iter().enumerate() {
        match a {
            Some(j) if gated[i][j] < FORBIDDEN => {
                out.pairs.push((i, j));
                col_used[j] = true;
            }
            _ => out.unmatched_rows.push(i),
        }
    }
    out.unmatched_cols = (0..cols).filter(|&j| !col_used[j]).collect();
    debug_assert_eq!(out.pairs.len() + out.unmatched_rows.len(), rows);
    out
}

/// NIS-cost association of predicted tracks with observations. Pairs with
/// different labels are forbidden.
pub fn associate(
    tracks: &[TrackState],
    obs: &[Observation],
    h: &DMatrix<f64>,
    gate_value: f64,
) -> Result<(Association, Vec<Vec<f64>>)> {
    let mut cost = vec![vec![f64::INFINITY; obs.len()]; tracks.len()];
    for (i, t) in tracks.iter().enumerate() {
        for (j, o) in obs.iter().enumerate() {
            if t.label == o.label {
                cost[i][j] = t.state.nis(&DVector::from_column_slice(&o.z), h, &o.r)?;
            }
        }
    }
    Ok((assign_gated_cols(&cost, obs.len(), gate_value), cost))
}

/// Applies the calibrators to a frame's detections.
pub fn prepare_observations(
    detections: &[Detection],
    config: &TrackerConfig,
    conf_cal: Option<&ConfidenceCalibrator>,
    reg_cal: Option<&RegressionCalibrator>,
) -> Result<Vec<Observation>> {
    let mut out = Vec::with_capacity(detections.len());
    for d in detections {
        d.validate()?;
        if d.confidence < config.min_confidence {
            continue;
        }
        let z = d.bbox.to_array();
        let confidence = match conf_cal {
            Some(c) => c.transform(&extract_features(d.confidence, &d.bbox, config.image_size)),
            None => d.confidence,
        };
        let r = match (d.variances, reg_cal) {
            (Some(v), Some(cal)) => cal.gaussian(&z, &v)?,
            (Some(v), None) => DMatrix::from_diagonal(&DVector::from_column_slice(&v)),
            (None, _) => {
                let s = config.fallback_std;
                let ext = [d.bbox.w, d.bbox.h, d.bbox.w, d.bbox.h];
                DMatrix::from_diagonal(&DVector::from_iterator(4, ext.iter().map(|e| (s * e.max(1e-3)).powi(2))))
            }
        };
        out.push(Observation { detection_id: d.detection_id, label: d.label, z, r, confidence });
    }
    Ok(out)
}

/// Result of one tracker step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub reported: Vec<TrackRecord>,
    /// NIS of every accepted track/detection pair.
    pub nis: Vec<f64>,
}

/// Multi-object tracker over a sequence of frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    gate_value: f64,
    tracks: Vec<TrackState>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let gate_value = chi2_quantile(OBS_DIM, config.existence.gate)?;
        Ok(Self {
            f: config.kalman.transition(),
            h: config.kalman.observation(),
            q: config.kalman.process_noise(),
            gate_value,
            config,
            tracks: Vec::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    pub fn gate_value(&self) -> f64 {
        self.gate_value
    }

    /// Predict, associate, update, spawn, drop, report.
    pub fn step(
        &mut self,
        frame_id: u64,
        detections: &[Detection],
        conf_cal: Option<&ConfidenceCalibrator>,
        reg_cal: Option<&RegressionCalibrator>,
    ) -> Result<StepOutput> {
        let obs = prepare_observations(detections, &self.config, conf_cal, reg_cal)?;
        self.step_observations(frame_id, &obs)
    }

    pub fn step_observations(&mut self, frame_id: u64, obs: &[Observation]) -> Result<StepOutput> {
        let ex = &self.config.existence;
        for t in self.tracks.iter_mut() {
            t.state = t.state.predict(&self.f, &self.q);
            t.existence = existence_predict(t.existence, ex);
            t.age += 1;
            t.frames_since_update += 1;
        }
        let (mut assoc, cost) = associate(&self.tracks, obs, &self.h, self.gate_value)?;
        if self.config.fallback_iou <= 1.0 && !assoc.unmatched_rows.is_empty() && !assoc.unmatched_cols.is_empty() {
            let overlap: Vec<Vec<f64>> = assoc
                .unmatched_rows
                .iter()
                .map(|&i| {
                    let t = &self.tracks[i];
                    let tb = track_box(&t.state);
                    assoc
                        .unmatched_cols
                        .iter()
                        .map(|&j| {
                            let o = &obs[j];
                            if o.label == t.label {
                                1.0 - iou(&tb, &BoundingBox::from_array(o.z))
                            } else {
                                f64::INFINITY
                            }
                        })
                        .collect()
                })
                .collect();
            let second = assign_gated_cols(&overlap, assoc.unmatched_cols.len(), 1.0 - self.config.fallback_iou);
            for &(a, b) in &second.pairs {
                assoc.pairs.push((assoc.unmatched_rows[a], assoc.unmatched_cols[b]));
            }
            assoc.unmatched_rows = second.unmatched_rows.iter().map(|&a| assoc.unmatched_rows[a]).collect();
            assoc.unmatched_cols = second.unmatched_cols.iter().map(|&b| assoc.unmatched_cols[b]).collect();
        }
        let mut out = StepOutput::default();
        for &(i, j) in &assoc.pairs {
            let o = &obs[j];
            let t = &mut self.tracks[i];
            t.state = t.state.update(&DVector::from_column_slice(&o.z), &self.h, &o.r)?;
            t.existence = existence_update(t.existence, o.confidence, ex);
            t.frames_since_update = 0;
            out.nis.push(cost[i][j]);
        }
        if let Some(pd) = ex.miss_detection_probability {
            for &i in &assoc.unmatched_rows {
                self.tracks[i].existence = existence_miss_update(self.tracks[i].existence, pd);
            }
        }
        let existing = self.tracks.len();
        for &j in &assoc.unmatched_cols {
            let o = &obs[j];
            let ob = BoundingBox::from_array(o.z);
            let suppressed = self.tracks[..existing]
                .iter()
                .any(|t| t.label == o.label && iou(&ob, &track_box(&t.state)) >= self.config.spawn_suppression_iou);
            if suppressed {
                continue;
            }
            self.tracks.push(TrackState {
                id: self.next_id,
                label: o.label,
                state: self.config.kalman.initial_state(&o.z, &o.r),
                existence: o.confidence.clamp(0.0, 1.0),
                age: 0,
                frames_since_update: 0,
            });
            self.next_id += 1;
        }
        let drop = ex.drop_threshold;
        self.tracks.retain(|t| t.existence >= drop);
        for t in &self.tracks {
            if t.existence >= ex.report_threshold {
                out.reported.push(record(frame_id, t));
            }
        }
        Ok(out)
    }
}

fn track_box(s: &GaussianState) -> BoundingBox {
    let m = &s.mean;
    BoundingBox::from_array([m[0], m[1], m[2].max(1e-6), m[3].max(1e-6)])
}

fn record(frame_id: u64, t: &TrackState) -> TrackRecord {
    TrackRecord {
        frame_id,
        track_id: t.id,
        label: t.label,
        bbox: track_box(&t.state),
        existence: t.existence,
        var: [t.state.cov[(0, 0)], t.state.cov[(1, 1)], t.state.cov[(2, 2)], t.state.cov[(3, 3)]],
    }
}

/// Emitted tracks and association NIS values of a whole run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackingRun {
    pub records: Vec<TrackRecord>,
    pub nis: Vec<f64>,
}

impl TrackingRun {
    pub fn mean_nis(&self) -> Option<f64> {
        (!self.nis.is_empty()).then(|| self.nis.iter().sum::<f64>() / self.nis.len() as f64)
    }
}

/// Runs a fresh tracker over the detections of `frames` in order.
pub fn run_tracker(
    frames: &[Frame],
    config: &TrackerConfig,
    conf_cal: Option<&ConfidenceCalibrator>,
    reg_cal: Option<&RegressionCalibrator>,
) -> Result<TrackingRun> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut run = TrackingRun::default();
    for f in frames {
        let step = tracker.step(f.frame_id, &f.detections, conf_cal, reg_cal)?;
        run.records.extend(step.reported);
        run.nis.extend(step.nis);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: u64, conf: f64, b: [f64; 4]) -> Detection {
        Detection {
            label: 0,
            confidence: conf,
            bbox: BoundingBox::from_array(b),
            variances: Some([1.0; 4]),
            frame_id: 0,
            detection_id: id,
        }
    }

    #[test]
    fn gated_assignment() {
        let a = assign_gated(&[vec![1.0, 2.0], vec![2.0, 1.0]], 10.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let b = assign_gated(&[vec![11.0, 12.0], vec![20.0, 30.0]], 10.0);
        assert!(b.pairs.is_empty());
        assert_eq!(b.unmatched_rows, vec![0, 1]);
        assert_eq!(b.unmatched_cols, vec![0, 1]);
    }

    #[test]
    fn spawns_reports_and_drops() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let out = t
            .step(
                0,
                &[
                    det(0, 0.9, [100.0, 100.0, 20.0, 20.0]),
                    det(1, 0.4, [300.0, 300.0, 20.0, 20.0]),
                    det(2, 0.1, [500.0, 500.0, 20.0, 20.0]),
                ],
                None,
                None,
            )
            .unwrap();
        assert_eq!(t.tracks().len(), 2);
        assert_eq!(out.reported.len(), 1);
        assert_eq!(out.reported[0].track_id, 1);
        let out = t.step(1, &[det(0, 0.9, [101.0, 100.0, 20.0, 20.0])], None, None).unwrap();
        assert_eq!(out.nis.len(), 1);
        assert_eq!(out.reported[0].track_id, 1);
        assert!(out.reported[0].existence > 0.9);
    }

    #[test]
    fn labels_never_cross() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(0, &[det(0, 0.9, [100.0, 100.0, 20.0, 20.0])], None, None).unwrap();
        let mut d = det(0, 0.9, [100.0, 100.0, 20.0, 20.0]);
        d.label = 1;
        let out = t.step(1, &[d], None, None).unwrap();
        assert!(out.nis.is_empty());
        assert_eq!(t.tracks().len(), 2);
    }

    #[test]
    fn missed_frames_use_prediction_unless_configured() {
        let existence_after_miss = |pd: Option<f64>| {
            let mut cfg = TrackerConfig::default();
            cfg.existence.miss_detection_probability = pd;
            let mut t = Tracker::new(cfg).unwrap();
            t.step(0, &[det(0, 0.95, [100.0, 100.0, 20.0, 20.0])], None, None).unwrap();
            t.step(1, &[], None, None).unwrap();
            t.tracks()[0].existence
        };
        let predicted = existence_after_miss(None);
        assert!((predicted - 0.9 * 0.95).abs() < 1e-12);
        let updated = existence_after_miss(Some(0.5));
        assert!((updated - existence_miss_update(predicted, 0.5)).abs() < 1e-12);
        assert!(updated < predicted);
    }
}
