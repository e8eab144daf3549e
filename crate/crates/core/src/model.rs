//! Shared domain types: boxes, detections, ground truth, and the matched
//! calibration dataset built by greedy IoU matching.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Axis-aligned box in center/size encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Validated constructor; width and height must be positive and finite.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return invalid("box center must be finite");
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return invalid(format!("box size must be positive, got w={} h={}", self.w, self.h));
        }
        Ok(())
    }

    /// Corner form `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Builds a box from `[cx, cy, w, h]` without validation.
    pub fn from_array(a: [f64; 4]) -> Self {
        Self { cx: a[0], cy: a[1], w: a[2], h: a[3] }
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    pub(crate) fn max_coordinate(&self) -> f64 {
        let (x0, y0, x1, y1) = self.corners();
        self.w.max(self.h).max(x1).max(y1).max(x0.abs()).max(y0.abs())
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: u32,
    pub confidence: f64,
    pub bbox: BoundingBox,
    /// Per-dimension Gaussian variances for `(cx, cy, w, h)`.
    pub variances: Option<[f64; 4]>,
    pub frame_id: u64,
    pub detection_id: u64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return invalid(format!("confidence {} outside [0,1]", self.confidence));
        }
        self.bbox.validate()?;
        if let Some(v) = &self.variances {
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return invalid("box variances must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub label: u32,
    pub bbox: BoundingBox,
    pub frame_id: u64,
    pub object_id: u64,
}

/// A detection joined with its ground-truth match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub confidence: f64,
    pub label: u32,
    pub bbox: BoundingBox,
    pub matched: bool,
    pub variances: Option<[f64; 4]>,
    /// Present exactly when `matched` is true.
    pub gt_box: Option<BoundingBox>,
}

impl CalibrationSample {
    pub fn target(&self) -> f64 {
        if self.matched {
            1.0
        } else {
            0.0
        }
    }
}

/// Image extent used to normalize box features into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// Calibration input feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Confidence,
    Cx,
    Cy,
    W,
    H,
}

impl Feature {
    pub const ALL: [Feature; 5] = [Feature::Confidence, Feature::Cx, Feature::Cy, Feature::W, Feature::H];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Confidence => "confidence",
            Feature::Cx => "cx",
            Feature::Cy => "cy",
            Feature::W => "w",
            Feature::H => "h",
        }
    }
}

/// Normalized features of one detection, indexed by [`Feature::index`].
pub type FeatureValues = [f64; 5];

/// Extracts normalized features. Box coordinates are divided by the image
/// size when one is given, then clamped into `[0, 1]`.
pub fn extract_features(confidence: f64, bbox: &BoundingBox, image: Option<ImageSize>) -> FeatureValues {
    let (sx, sy) = image.map_or((1.0, 1.0), |s| (s.width, s.height));
    [
        confidence.clamp(0.0, 1.0),
        (bbox.cx / sx).clamp(0.0, 1.0),
        (bbox.cy / sy).clamp(0.0, 1.0),
        (bbox.w / sx).clamp(0.0, 1.0),
        (bbox.h / sy).clamp(0.0, 1.0),
    ]
}

/// Detections joined with ground truth; the substrate for every confidence
/// calibrator and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedDataset {
    pub samples: Vec<CalibrationSample>,
    pub iou_threshold: f64,
    #[serde(default)]
    pub image_size: Option<ImageSize>,
}

impl MatchedDataset {
    pub fn new(samples: Vec<CalibrationSample>, iou_threshold: f64, image_size: Option<ImageSize>) -> Self {
        Self { samples, iou_threshold, image_size }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self, i: usize) -> FeatureValues {
        let s = &self.samples[i];
        extract_features(s.confidence, &s.bbox, self.image_size)
    }

    pub fn all_features(&self) -> Vec<FeatureValues> {
        (0..self.len()).map(|i| self.features(i)).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(CalibrationSample::target).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.confidence).collect()
    }

    /// Same samples with confidences replaced.
    pub fn with_confidences(&self, conf: &[f64]) -> Result<Self> {
        if conf.len() != self.len() {
            return invalid("confidence vector length does not match dataset");
        }
        let mut out = self.clone();
        for (s, &c) in out.samples.iter_mut().zip(conf) {
            s.confidence = c;
        }
        Ok(out)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            iou_threshold: self.iou_threshold,
            image_size: self.image_size,
        }
    }

    /// Requires at least one matched and one unmatched sample.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::NoSamples);
        }
        let pos = self.samples.iter().filter(|s| s.matched).count();
        if pos == 0 || pos == self.len() {
            return Err(Error::DegenerateLabels);
        }
        Ok(())
    }
}

/// Greedy class-aware matching of one frame.
///
/// Detections are visited by descending confidence (ties: ascending
/// `detection_id`); each claims the unclaimed same-label ground truth with
/// the highest IoU at or above `iou_threshold` (ties: ascending `object_id`).
/// Returns, per detection in input order, the index of the claimed ground truth.
pub fn match_frame(
    detections: &[Detection],
    ground_truths: &[GroundTruthObject],
    iou_threshold: f64,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .total_cmp(&detections[a].confidence)
            .then(detections[a].detection_id.cmp(&detections[b].detection_id))
    });
    let mut claimed = vec![false; ground_truths.len()];
    let mut out = vec![None; detections.len()];
    for di in order {
        let d = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in ground_truths.iter().enumerate() {
            if claimed[gi] || g.label != d.label {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bv)) => v > bv || (v == bv && g.object_id < ground_truths[bi].object_id),
            };
            if better {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            claimed[gi] = true;
            out[di] = Some(gi);
        }
    }
    out
}

/// Detections and ground truth of a single frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<GroundTruthObject>,
}

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.3;

/// Matches every frame and concatenates the results, dropping detections
/// with confidence below `min_confidence`.
pub fn build_dataset(
    frames: &[Frame],
    iou_threshold: f64,
    min_confidence: f64,
    image_size: Option<ImageSize>,
) -> Result<MatchedDataset> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return invalid(format!("iou threshold {iou_threshold} outside (0,1)"));
    }
    check_coordinates(frames, image_size)?;
    let mut samples = Vec::new();
    for f in frames {
        for d in &f.detections {
            d.validate()?;
        }
        let assignment = match_frame(&f.detections, &f.ground_truths, iou_threshold);
        for (d, a) in f.detections.iter().zip(assignment) {
            if d.confidence < min_confidence {
                continue;
            }
            samples.push(CalibrationSample {
                confidence: d.confidence,
                label: d.label,
                bbox: d.bbox,
                matched: a.is_some(),
                variances: d.variances,
                gt_box: a.map(|gi| f.ground_truths[gi].bbox),
            });
        }
    }
    Ok(MatchedDataset::new(samples, iou_threshold, image_size))
}

fn check_coordinates(frames: &[Frame], image_size: Option<ImageSize>) -> Result<()> {
    let boxes =
        frames.iter().flat_map(|f| f.detections.iter().map(|d| d.bbox).chain(f.ground_truths.iter().map(|g| g.bbox)));
    let (mut pixel, mut relative) = (false, false);
    for b in boxes {
        if b.max_coordinate() > 1.0 {
            pixel = true;
        } else {
            relative = true;
        }
    }
    if pixel && relative {
        return Err(Error::MixedCoordinates);
    }
    if pixel && image_size.is_none() {
        return invalid("pixel coordinates require a declared image size");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn det(id: u64, conf: f64, bbox: BoundingBox) -> Detection {
        Detection { label: 0, confidence: conf, bbox, variances: None, frame_id: 0, detection_id: id }
    }

    fn gt(id: u64, bbox: BoundingBox) -> GroundTruthObject {
        GroundTruthObject { label: 0, bbox, frame_id: 0, object_id: id }
    }

    #[test]
    fn iou_hand_values() {
        let a = BoundingBox::from_corners(0.0, 0.0, 2.0, 2.0).unwrap();
        let c = BoundingBox::from_corners(1.0, 0.0, 3.0, 2.0).unwrap();
        assert!((iou(&a, &c) - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a), 1.0);
        let far = b(10.0, 10.0, 1.0, 1.0);
        assert_eq!(iou(&a, &far), 0.0);
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn greedy_prefers_higher_confidence() {
        let g = b(0.5, 0.5, 0.2, 0.2);
        let dets = vec![det(1, 0.8, b(0.505, 0.5, 0.2, 0.2)), det(0, 0.9, g)];
        let m = match_frame(&dets, &[gt(0, g)], 0.5);
        assert_eq!(m, vec![None, Some(0)]);
    }

    #[test]
    fn below_threshold_unmatched() {
        let g = BoundingBox::from_corners(0.0, 0.0, 1.0, 1.0).unwrap();
        // Contained box covering 40% of the ground truth.
        let d = BoundingBox::from_corners(0.0, 0.0, 0.4, 1.0).unwrap();
        assert!((iou(&g, &d) - 0.4).abs() < 1e-12);
        assert_eq!(match_frame(&[det(0, 0.9, d)], &[gt(0, g)], 0.5), vec![None]);
    }

    #[test]
    fn confidence_tie_broken_by_detection_id() {
        let g = b(0.5, 0.5, 0.2, 0.2);
        let dets = vec![det(7, 0.9, g), det(3, 0.9, g)];
        assert_eq!(match_frame(&dets, &[gt(0, g)], 0.5), vec![None, Some(0)]);
    }

    #[test]
    fn iou_tie_broken_by_object_id() {
        let g = b(0.5, 0.5, 0.2, 0.2);
        let gts = vec![gt(9, g), gt(2, g)];
        assert_eq!(match_frame(&[det(0, 0.9, g)], &gts, 0.5), vec![Some(1)]);
    }

    #[test]
    fn labels_must_agree() {
        let g = b(0.5, 0.5, 0.2, 0.2);
        let mut d = det(0, 0.9, g);
        d.label = 1;
        assert_eq!(match_frame(&[d], &[gt(0, g)], 0.5), vec![None]);
    }

    #[test]
    fn build_dataset_filters_and_joins() {
        let g = b(0.5, 0.5, 0.2, 0.2);
        let frame = Frame {
            frame_id: 0,
            detections: vec![det(0, 0.9, g), det(1, 0.2, g), det(2, 0.5, b(0.1, 0.1, 0.1, 0.1))],
            ground_truths: vec![gt(0, g)],
        };
        let ds = build_dataset(&[frame], 0.5, DEFAULT_MIN_CONFIDENCE, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.samples[0].matched && ds.samples[0].gt_box == Some(g));
        assert!(!ds.samples[1].matched && ds.samples[1].gt_box.is_none());
    }

    #[test]
    fn mixed_coordinates_rejected() {
        let frame = Frame {
            frame_id: 0,
            detections: vec![det(0, 0.9, b(0.5, 0.5, 0.2, 0.2)), det(1, 0.9, b(300.0, 200.0, 40.0, 40.0))],
            ground_truths: vec![],
        };
        let size = Some(ImageSize { width: 640.0, height: 480.0 });
        assert!(matches!(build_dataset(&[frame], 0.5, 0.3, size), Err(Error::MixedCoordinates)));
    }

    #[test]
    fn pixel_features_normalized() {
        let f = extract_features(0.7, &b(320.0, 120.0, 64.0, 48.0), Some(ImageSize { width: 640.0, height: 480.0 }));
        assert_eq!(f, [0.7, 0.5, 0.25, 0.1, 0.1]);
    }
}
