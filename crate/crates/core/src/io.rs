//! JSONL record formats, model files and atomic file output.
//!
//! Every JSONL file starts with a header line
//! `{"header": {"format": ..., "coordinates": ..., "image_size": ...}}`
//! followed by one record per line. Box and variance fields are objects
//! with keys `cx`, `cy`, `w`, `h`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::confidence::ConfidenceCalibrator;
use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, Frame, GroundTruthObject, ImageSize};
use crate::regression::RegressionCalibrator;
use crate::tracking::TrackRecord;

/// Serde adapter writing `[f64; 4]` as `{cx, cy, w, h}`.
pub mod xywh {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Xywh {
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
    }

    pub fn serialize<S: Serializer>(v: &[f64; 4], s: S) -> Result<S::Ok, S::Error> {
        Xywh { cx: v[0], cy: v[1], w: v[2], h: v[3] }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 4], D::Error> {
        let x = Xywh::deserialize(d)?;
        Ok([x.cx, x.cy, x.w, x.h])
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<[f64; 4]>, s: S) -> Result<S::Ok, S::Error> {
            v.map(|v| Xywh { cx: v[0], cy: v[1], w: v[2], h: v[3] }).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[f64; 4]>, D::Error> {
            Ok(Option::<Xywh>::deserialize(d)?.map(|x| [x.cx, x.cy, x.w, x.h]))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    Detections,
    GroundTruth,
    Tracks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    #[default]
    Pixel,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: RecordFormat,
    #[serde(default)]
    pub coordinates: Coordinates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<ImageSize>,
}

impl Header {
    pub fn new(format: RecordFormat, image_size: Option<ImageSize>) -> Self {
        Self { format, coordinates: Coordinates::Pixel, image_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionLine {
    frame_id: u64,
    detection_id: u64,
    label: u32,
    confidence: f64,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(default, with = "xywh::option", skip_serializing_if = "Option::is_none")]
    var: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroundTruthLine {
    frame_id: u64,
    object_id: u64,
    label: u32,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

/// Whether unknown fields are errors or warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Parsed JSONL file.
#[derive(Debug, Clone, PartialEq)]
pub struct Records<T> {
    pub header: Header,
    pub records: Vec<T>,
    pub warnings: Vec<String>,
}

const BOX_KEYS: &[&str] = &["cx", "cy", "w", "h"];

fn known_keys(format: RecordFormat) -> (&'static [&'static str], &'static [&'static str]) {
    match format {
        RecordFormat::Detections => {
            (&["frame_id", "detection_id", "label", "confidence", "box", "var"], &["box", "var"])
        }
        RecordFormat::GroundTruth => (&["frame_id", "object_id", "label", "box"], &["box"]),
        RecordFormat::Tracks => (&["frame_id", "track_id", "label", "box", "existence", "var"], &["box", "var"]),
    }
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

/// Removes unknown keys; an error in strict mode, a warning otherwise.
fn screen(
    map: &mut Map<String, Value>,
    known: &[&str],
    what: &str,
    line: usize,
    mode: ParseMode,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let unknown: Vec<String> = map.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
    for k in unknown {
        match mode {
            ParseMode::Strict => return perr(line, format!("unknown field `{k}` in {what}")),
            ParseMode::Lenient => {
                warnings.push(format!("line {line}: ignoring unknown field `{k}` in {what}"));
                map.remove(&k);
            }
        }
    }
    Ok(())
}

fn parse_lines<T>(
    text: &str,
    expected: RecordFormat,
    mode: ParseMode,
    convert: impl Fn(Value, usize) -> Result<T>,
    bbox_of: impl Fn(&T) -> BoundingBox,
) -> Result<Records<T>> {
    let mut warnings = Vec::new();
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).or_else(|e| perr(line, e.to_string()))?;
        let Value::Object(mut map) = v else {
            return perr(line, "expected a JSON object");
        };
        if let Some(h) = map.remove("header") {
            if header.is_some() || !records.is_empty() {
                return perr(line, "header must be the first line and appear once");
            }
            if !map.is_empty() {
                screen(&mut map, &[], "header line", line, mode, &mut warnings)?;
            }
            let Value::Object(mut hm) = h else {
                return perr(line, "header must be an object");
            };
            screen(&mut hm, &["format", "coordinates", "image_size"], "header", line, mode, &mut warnings)?;
            let h: Header = serde_json::from_value(Value::Object(hm)).or_else(|e| perr(line, e.to_string()))?;
            if h.format != expected {
                return perr(line, format!("expected a {expected:?} file, header declares {:?}", h.format));
            }
            if let Some(s) = h.image_size {
                if !(s.width > 0.0 && s.height > 0.0) {
                    return perr(line, "image size must be positive");
                }
            }
            header = Some(h);
            continue;
        }
        if header.is_none() {
            match mode {
                ParseMode::Strict => return perr(line, "missing header line"),
                ParseMode::Lenient => {
                    warnings.push(format!("line {line}: no header, assuming pixel coordinates"));
                    header = Some(Header::new(expected, None));
                }
            }
        }
        let (keys, nested) = known_keys(expected);
        screen(&mut map, keys, "record", line, mode, &mut warnings)?;
        for n in nested {
            if let Some(Value::Object(inner)) = map.get_mut(*n) {
                screen(inner, BOX_KEYS, n, line, mode, &mut warnings)?;
            }
        }
        let rec = convert(Value::Object(map), line)?;
        let b = bbox_of(&rec);
        if header.as_ref().is_some_and(|h| h.coordinates == Coordinates::Relative) && b.max_coordinate() > 1.0 {
            return perr(line, "box exceeds the unit square in a relative-coordinate file");
        }
        records.push(rec);
    }
    let header = match header {
        Some(h) => h,
        None if mode == ParseMode::Lenient => Header::new(expected, None),
        None => return perr(1, "missing header line"),
    };
    Ok(Records { header, records, warnings })
}

pub fn parse_detections(text: &str, mode: ParseMode) -> Result<Records<Detection>> {
    parse_lines(
        text,
        RecordFormat::Detections,
        mode,
        |v, line| {
            let d: DetectionLine = serde_json::from_value(v).or_else(|e| perr(line, e.to_string()))?;
            let det = Detection {
                label: d.label,
                confidence: d.confidence,
                bbox: d.bbox,
                variances: d.var,
                frame_id: d.frame_id,
                detection_id: d.detection_id,
            };
            det.validate().or_else(|e| perr(line, e.to_string()))?;
            Ok(det)
        },
        |d| d.bbox,
    )
}

pub fn parse_ground_truth(text: &str, mode: ParseMode) -> Result<Records<GroundTruthObject>> {
    parse_lines(
        text,
        RecordFormat::GroundTruth,
        mode,
        |v, line| {
            let g: GroundTruthLine = serde_json::from_value(v).or_else(|e| perr(line, e.to_string()))?;
            g.bbox.validate().or_else(|e| perr(line, e.to_string()))?;
            Ok(GroundTruthObject { label: g.label, bbox: g.bbox, frame_id: g.frame_id, object_id: g.object_id })
        },
        |g| g.bbox,
    )
}

pub fn parse_tracks(text: &str, mode: ParseMode) -> Result<Records<TrackRecord>> {
    parse_lines(
        text,
        RecordFormat::Tracks,
        mode,
        |v, line| {
            let t: TrackRecord = serde_json::from_value(v).or_else(|e| perr(line, e.to_string()))?;
            if !(0.0..=1.0).contains(&t.existence) {
                return perr(line, "existence probability outside [0, 1]");
            }
            Ok(t)
        },
        |t| t.bbox,
    )
}

fn render<T: Serialize>(header: &Header, items: impl Iterator<Item = T>) -> Result<String> {
    let mut out = serde_json::to_string(&serde_json::json!({ "header": header }))?;
    out.push('\n');
    for it in items {
        out.push_str(&serde_json::to_string(&it)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn detections_to_jsonl(header: &Header, dets: &[Detection]) -> Result<String> {
    render(
        header,
        dets.iter().map(|d| DetectionLine {
            frame_id: d.frame_id,
            detection_id: d.detection_id,
            label: d.label,
            confidence: d.confidence,
            bbox: d.bbox,
            var: d.variances,
        }),
    )
}

pub fn ground_truth_to_jsonl(header: &Header, gts: &[GroundTruthObject]) -> Result<String> {
    render(
        header,
        gts.iter().map(|g| GroundTruthLine {
            frame_id: g.frame_id,
            object_id: g.object_id,
            label: g.label,
            bbox: g.bbox,
        }),
    )
}

pub fn tracks_to_jsonl(header: &Header, tracks: &[TrackRecord]) -> Result<String> {
    render(header, tracks.iter())
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}-{}", std::process::id(), TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn read_detections(path: &Path, mode: ParseMode) -> Result<Records<Detection>> {
    parse_detections(&fs::read_to_string(path)?, mode)
}

pub fn read_ground_truth(path: &Path, mode: ParseMode) -> Result<Records<GroundTruthObject>> {
    parse_ground_truth(&fs::read_to_string(path)?, mode)
}

pub fn read_tracks(path: &Path, mode: ParseMode) -> Result<Records<TrackRecord>> {
    parse_tracks(&fs::read_to_string(path)?, mode)
}

/// Groups detections and ground truth into frames ordered by frame id.
pub fn group_frames(dets: &[Detection], gts: &[GroundTruthObject]) -> Vec<Frame> {
    let mut frames: BTreeMap<u64, Frame> = BTreeMap::new();
    for d in dets {
        frames
            .entry(d.frame_id)
            .or_insert_with(|| Frame { frame_id: d.frame_id, ..Frame::default() })
            .detections
            .push(d.clone());
    }
    for g in gts {
        frames
            .entry(g.frame_id)
            .or_insert_with(|| Frame { frame_id: g.frame_id, ..Frame::default() })
            .ground_truths
            .push(g.clone());
    }
    frames.into_values().collect()
}

/// A fitted model file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Confidence(ConfidenceCalibrator),
    Regression(RegressionCalibrator),
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        match self {
            ModelFile::Confidence(m) => m.to_json(),
            ModelFile::Regression(m) => m.to_json(),
        }
    }

    /// Dispatches on the `method` tag.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        let method = v.get("method").and_then(Value::as_str).unwrap_or_default().to_string();
        match method.as_str() {
            "histogram" | "logistic" | "logistic_dependent" | "beta" | "beta_dependent" | "bayesian" => {
                Ok(ModelFile::Confidence(ConfidenceCalibrator::from_json_value(v)?))
            }
            _ => Ok(ModelFile::Regression(RegressionCalibrator::from_json_value(v)?)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}

pub fn load_confidence_model(path: &Path) -> Result<ConfidenceCalibrator> {
    match ModelFile::load(path)? {
        ModelFile::Confidence(m) => Ok(m),
        ModelFile::Regression(m) => {
            Err(Error::InvalidInput(format!("expected a confidence model, found '{}'", m.method())))
        }
    }
}

pub fn load_regression_model(path: &Path) -> Result<RegressionCalibrator> {
    match ModelFile::load(path)? {
        ModelFile::Regression(m) => Ok(m),
        ModelFile::Confidence(m) => {
            Err(Error::InvalidInput(format!("expected a regression model, found '{}'", m.method())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det() -> Detection {
        Detection {
            label: 2,
            confidence: 0.73,
            bbox: BoundingBox::from_array([10.5, 20.25, 4.0, 8.0]),
            variances: Some([0.1, 0.2, 0.3, 0.4]),
            frame_id: 3,
            detection_id: 9,
        }
    }

    #[test]
    fn detection_round_trip() {
        let h = Header::new(RecordFormat::Detections, Some(ImageSize { width: 100.0, height: 50.0 }));
        let mut d2 = det();
        d2.variances = None;
        let text = detections_to_jsonl(&h, &[det(), d2.clone()]).unwrap();
        let r = parse_detections(&text, ParseMode::Strict).unwrap();
        assert_eq!(r.header, h);
        assert_eq!(r.records, vec![det(), d2]);
        assert_eq!(detections_to_jsonl(&r.header, &r.records).unwrap(), text);
    }

    #[test]
    fn unknown_fields_strict_vs_lenient() {
        let text = "{\"header\":{\"format\":\"detections\",\"image_size\":{\"width\":100.0,\"height\":50.0}}}\n\
            {\"frame_id\":0,\"detection_id\":0,\"label\":0,\"confidence\":0.5,\"box\":{\"cx\":5,\"cy\":5,\"w\":2,\"h\":2,\"z\":1},\"extra\":true}\n";
        let e = parse_detections(text, ParseMode::Strict).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let r = parse_detections(text, ParseMode::Lenient).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let hdr = "{\"header\":{\"format\":\"ground_truth\"}}\n";
        assert!(parse_ground_truth("{\"frame_id\":0}\n", ParseMode::Strict).is_err());
        assert!(parse_ground_truth(&format!("{hdr}not json\n"), ParseMode::Strict).is_err());
        assert!(parse_detections(hdr, ParseMode::Strict).is_err());
        let rel = "{\"header\":{\"format\":\"ground_truth\",\"coordinates\":\"relative\"}}\n\
            {\"frame_id\":0,\"object_id\":1,\"label\":0,\"box\":{\"cx\":5,\"cy\":5,\"w\":2,\"h\":2}}\n";
        assert!(parse_ground_truth(rel, ParseMode::Strict).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("detcal-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("out.jsonl");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
