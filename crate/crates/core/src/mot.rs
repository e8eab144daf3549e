//! CLEAR-MOT and identity metrics of a track stream against ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{iou, GroundTruthObject};
use crate::tracking::{hungarian, TrackRecord};

/// Coverage at or above which a trajectory is mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Coverage below which a trajectory is mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotTotals {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub frames: usize,
    pub objects: usize,
    pub gt_boxes: usize,
    pub track_boxes: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub frame_id: u64,
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    /// Mean center distance of matched pairs, in box units.
    pub motp_distance: Option<f64>,
    /// Mean IoU of matched pairs.
    pub motp_iou: Option<f64>,
    pub idf1: f64,
    pub fp_per_frame: f64,
    pub fn_per_frame: f64,
    pub idsw_per_object: f64,
    pub mt: f64,
    pub pt: f64,
    pub ml: f64,
    pub totals: MotTotals,
    pub per_frame: Vec<FrameCounts>,
}

impl MotReport {
    /// Aligned two-column summary.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        let t = &self.totals;
        let rows: Vec<(&str, String)> = vec![
            ("MOTA", format!("{:.6}", self.mota)),
            ("MOTP (distance)", opt(self.motp_distance)),
            ("MOTP (IoU)", opt(self.motp_iou)),
            ("IDF1", format!("{:.6}", self.idf1)),
            ("FP / frame", format!("{:.6}", self.fp_per_frame)),
            ("FN / frame", format!("{:.6}", self.fn_per_frame)),
            ("IDSW / object", format!("{:.6}", self.idsw_per_object)),
            ("MT", format!("{:.6}", self.mt)),
            ("PT", format!("{:.6}", self.pt)),
            ("ML", format!("{:.6}", self.ml)),
            ("TP", t.tp.to_string()),
            ("FP", t.fp.to_string()),
            ("FN", t.fn_.to_string()),
            ("IDSW", t.idsw.to_string()),
            ("frames", t.frames.to_string()),
            ("objects", t.objects.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<width$}  {v:>12}");
        }
        s
    }
}

fn by_frame<T>(items: &[T], frame: impl Fn(&T) -> u64) -> BTreeMap<u64, Vec<&T>> {
    let mut m: BTreeMap<u64, Vec<&T>> = BTreeMap::new();
    for it in items {
        m.entry(frame(it)).or_default().push(it);
    }
    m
}

/// Evaluates `tracks` against `gt` frame by frame. Matches are restricted to
/// equal labels and IoU at or above `iou_threshold`; a pair matched in an
/// earlier frame is kept while it stays above the threshold, the rest are
/// assigned by maximizing total IoU.
pub fn evaluate(gt: &[GroundTruthObject], tracks: &[TrackRecord], iou_threshold: f64) -> Result<MotReport> {
    if gt.is_empty() {
        return Err(Error::NoSamples);
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return invalid(format!("iou threshold {iou_threshold} outside (0,1]"));
    }
    let gt_frames = by_frame(gt, |g| g.frame_id);
    let tr_frames = by_frame(tracks, |t| t.frame_id);
    let frame_ids: BTreeSet<u64> = gt_frames.keys().chain(tr_frames.keys()).copied().collect();
    for (f, gs) in &gt_frames {
        let ids: BTreeSet<u64> = gs.iter().map(|g| g.object_id).collect();
        if ids.len() != gs.len() {
            return invalid(format!("duplicate object id in frame {f}"));
        }
    }
    for (f, ts) in &tr_frames {
        let ids: BTreeSet<u64> = ts.iter().map(|t| t.track_id).collect();
        if ids.len() != ts.len() {
            return invalid(format!("duplicate track id in frame {f}"));
        }
    }

    let empty_g: Vec<&GroundTruthObject> = Vec::new();
    let empty_t: Vec<&TrackRecord> = Vec::new();
    let mut prev: HashMap<u64, u64> = HashMap::new();
    let mut last_track: HashMap<u64, u64> = HashMap::new();
    let mut gt_len: BTreeMap<u64, usize> = BTreeMap::new();
    let mut gt_hits: BTreeMap<u64, usize> = BTreeMap::new();
    let mut totals = MotTotals::default();
    let mut per_frame = Vec::with_capacity(frame_ids.len());
    let (mut dist_sum, mut iou_sum) = (0.0, 0.0);

    for &f in &frame_ids {
        let gs = gt_frames.get(&f).unwrap_or(&empty_g);
        let ts = tr_frames.get(&f).unwrap_or(&empty_t);
        for g in gs {
            *gt_len.entry(g.object_id).or_default() += 1;
        }
        let ov: Vec<Vec<f64>> = gs
            .iter()
            .map(|g| ts.iter().map(|t| if g.label == t.label { iou(&g.bbox, &t.bbox) } else { 0.0 }).collect())
            .collect();
        let mut g_match: Vec<Option<usize>> = vec![None; gs.len()];
        let mut t_used = vec![false; ts.len()];
        for (gi, g) in gs.iter().enumerate() {
            if let Some(&tid) = prev.get(&g.object_id) {
                if let Some(ti) = ts.iter().position(|t| t.track_id == tid) {
                    if !t_used[ti] && ov[gi][ti] >= iou_threshold {
                        g_match[gi] = Some(ti);
                        t_used[ti] = true;
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..gs.len()).filter(|&i| g_match[i].is_none()).collect();
        let free_t: Vec<usize> = (0..ts.len()).filter(|&j| !t_used[j]).collect();
        if !free_g.is_empty() && !free_t.is_empty() {
            let cost: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| {
                    free_t.iter().map(|&tj| if ov[gi][tj] >= iou_threshold { 1.0 - ov[gi][tj] } else { 1e6 }).collect()
                })
                .collect();
            for (a, b) in hungarian(&cost).into_iter().enumerate() {
                if let Some(b) = b {
                    let (gi, tj) = (free_g[a], free_t[b]);
                    if ov[gi][tj] >= iou_threshold {
                        g_match[gi] = Some(tj);
                        t_used[tj] = true;
                    }
                }
            }
        }

        let mut fc = FrameCounts { frame_id: f, gt: gs.len(), ..FrameCounts::default() };
        let mut next_prev = HashMap::new();
        for (gi, g) in gs.iter().enumerate() {
            match g_match[gi] {
                Some(tj) => {
                    let t = ts[tj];
                    fc.tp += 1;
                    *gt_hits.entry(g.object_id).or_default() += 1;
                    dist_sum += g.bbox.center_distance(&t.bbox);
                    iou_sum += ov[gi][tj];
                    if let Some(&last) = last_track.get(&g.object_id) {
                        if last != t.track_id {
                            fc.idsw += 1;
                        }
                    }
                    last_track.insert(g.object_id, t.track_id);
                    next_prev.insert(g.object_id, t.track_id);
                }
                None => fc.fn_ += 1,
            }
        }
        fc.fp = ts.len() - fc.tp;
        prev = next_prev;
        totals.tp += fc.tp;
        totals.fp += fc.fp;
        totals.fn_ += fc.fn_;
        totals.idsw += fc.idsw;
        per_frame.push(fc);
    }

    totals.frames = frame_ids.len();
    totals.objects = gt_len.len();
    totals.gt_boxes = gt.len();
    totals.track_boxes = tracks.len();
    let (mut mt, mut pt, mut ml) = (0usize, 0usize, 0usize);
    for (id, &n) in &gt_len {
        let cov = gt_hits.get(id).copied().unwrap_or(0) as f64 / n as f64;
        if cov >= MOSTLY_TRACKED {
            mt += 1;
        } else if cov < MOSTLY_LOST {
            ml += 1;
        } else {
            pt += 1;
        }
    }
    let objects = totals.objects as f64;
    let frames = totals.frames as f64;
    let gt_n = totals.gt_boxes as f64;
    Ok(MotReport {
        mota: 1.0 - (totals.fp + totals.fn_ + totals.idsw) as f64 / gt_n,
        motp_distance: (totals.tp > 0).then(|| dist_sum / totals.tp as f64),
        motp_iou: (totals.tp > 0).then(|| iou_sum / totals.tp as f64),
        idf1: idf1(gt, tracks, iou_threshold),
        fp_per_frame: totals.fp as f64 / frames,
        fn_per_frame: totals.fn_ as f64 / frames,
        idsw_per_object: totals.idsw as f64 / objects,
        mt: mt as f64 / objects,
        pt: pt as f64 / objects,
        ml: ml as f64 / objects,
        totals,
        per_frame,
    })
}

/// Per (gt trajectory, track trajectory) pair, the number of frames in which
/// both are present with equal labels and IoU at or above the threshold.
pub fn trajectory_overlaps(
    gt: &[GroundTruthObject],
    tracks: &[TrackRecord],
    iou_threshold: f64,
) -> (Vec<u64>, Vec<u64>, Vec<Vec<usize>>) {
    let gt_ids: Vec<u64> = gt.iter().map(|g| g.object_id).collect::<BTreeSet<_>>().into_iter().collect();
    let tr_ids: Vec<u64> = tracks.iter().map(|t| t.track_id).collect::<BTreeSet<_>>().into_iter().collect();
    let gi: HashMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let ti: HashMap<u64, usize> = tr_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut counts = vec![vec![0usize; tr_ids.len()]; gt_ids.len()];
    let tr_frames = by_frame(tracks, |t| t.frame_id);
    for g in gt {
        if let Some(ts) = tr_frames.get(&g.frame_id) {
            for t in ts {
                if t.label == g.label && iou(&g.bbox, &t.bbox) >= iou_threshold {
                    counts[gi[&g.object_id]][ti[&t.track_id]] += 1;
                }
            }
        }
    }
    (gt_ids, tr_ids, counts)
}

/// Identity F1 from the globally optimal one-to-one trajectory matching.
pub fn idf1(gt: &[GroundTruthObject], tracks: &[TrackRecord], iou_threshold: f64) -> f64 {
    let denom = (gt.len() + tracks.len()) as f64;
    if denom == 0.0 {
        return 0.0;
    }
    let (_, _, counts) = trajectory_overlaps(gt, tracks, iou_threshold);
    let idtp: usize = if counts.is_empty() || counts[0].is_empty() {
        0
    } else {
        let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&c| -(c as f64)).collect()).collect();
        hungarian(&cost).into_iter().enumerate().filter_map(|(i, j)| j.map(|j| counts[i][j])).sum()
    };
    2.0 * idtp as f64 / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundingBox;

    fn g(f: u64, id: u64, x: f64) -> GroundTruthObject {
        GroundTruthObject { label: 0, bbox: BoundingBox::from_array([x, 50.0, 20.0, 20.0]), frame_id: f, object_id: id }
    }

    fn t(f: u64, id: u64, x: f64) -> TrackRecord {
        TrackRecord {
            frame_id: f,
            track_id: id,
            label: 0,
            bbox: BoundingBox::from_array([x, 50.0, 20.0, 20.0]),
            existence: 0.9,
            var: [1.0; 4],
        }
    }

    #[test]
    fn hand_traced_switch() {
        let gt = vec![g(1, 1, 10.0), g(2, 1, 12.0), g(3, 1, 14.0)];
        let tr = vec![t(1, 7, 10.0), t(2, 7, 12.0), t(3, 9, 14.0)];
        let r = evaluate(&gt, &tr, 0.5).unwrap();
        assert_eq!(r.totals.idsw, 1);
        assert!((r.mota - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(r.mt, 1.0);
        assert!((r.idf1 - 2.0 * 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let gt: Vec<_> = (0..5).flat_map(|f| [g(f, 1, 10.0 + f as f64), g(f, 2, 200.0)]).collect();
        let tr: Vec<_> = gt.iter().map(|x| t(x.frame_id, x.object_id + 10, x.bbox.cx)).collect();
        let r = evaluate(&gt, &tr, 0.5).unwrap();
        assert_eq!((r.mota, r.idf1, r.mt, r.totals.idsw), (1.0, 1.0, 1.0, 0));
        assert_eq!(r.motp_distance, Some(0.0));
        let e = evaluate(&gt, &[], 0.5).unwrap();
        assert_eq!(e.totals.fn_, gt.len());
        assert_eq!(e.mota, 0.0);
        assert_eq!(e.ml, 1.0);
        assert!(evaluate(&[], &tr, 0.5).is_err());
    }

    #[test]
    fn text_report_aligned() {
        let gt = vec![g(1, 1, 10.0)];
        let s = evaluate(&gt, &[t(1, 1, 10.0)], 0.5).unwrap().to_text();
        let widths: BTreeSet<usize> = s.lines().map(|l| l.chars().count()).collect();
        assert_eq!(widths.len(), 1);
    }
}
