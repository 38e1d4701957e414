//! Tracking evaluation: the HOTA family, CLEAR-style MOTA, and counting-error
//! summaries.
//!
//! HOTA scores are computed at 19 IoU gates alpha in {0.05, 0.10, ..., 0.95}
//! and averaged. Matching at each gate uses a two-pass strategy: a first pass
//! accumulates per-(gt id, pred id) potential-association counts, a second
//! pass solves a per-frame assignment preferring, in order, more matches,
//! higher global association potential, and higher IoU.

use crate::assignment::{solve_assignment, CostMatrix};
use crate::geometry::{BoundingBox, Frame};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// The 19 IoU gates of the integrated HOTA score.
pub const HOTA_ALPHAS: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90,
    0.95,
];

/// Gate guard against spurious strict-inequality failures at exact IoU == alpha.
const GATE_EPS: f64 = 1e-12;

/// Weight separating the association-potential term from the IoU tie-break in
/// the per-frame matching benefit.
const POTENTIAL_SCALE: f64 = 1e8;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("track ids must be >= 1")]
    InvalidTrackId,
    #[error("visibility must lie in [0, 1]")]
    InvalidVisibility,
    #[error("ground truth is empty; scores are undefined")]
    EmptyGroundTruth,
    #[error("ground-truth count is zero; relative error is undefined")]
    ZeroGroundTruth,
}

/// One identity-labeled box of a prediction or ground-truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub frame: Frame,
    pub track_id: u32,
    pub bbox: BoundingBox,
    /// Visible fraction; meaningful for ground truth, 1.0 for predictions.
    pub visibility: f64,
}

impl LabeledBox {
    pub fn new(frame: Frame, track_id: u32, bbox: BoundingBox, visibility: f64) -> Result<Self, MetricsError> {
        if track_id == 0 {
            return Err(MetricsError::InvalidTrackId);
        }
        if !(0.0..=1.0).contains(&visibility) {
            return Err(MetricsError::InvalidVisibility);
        }
        Ok(Self { frame, track_id, bbox, visibility })
    }
}

/// A matched prediction/ground-truth pair at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub frame: Frame,
    pub gt_index: usize,
    pub pred_index: usize,
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
}

/// Per-alpha decomposition of boxes into matches, misses, and false alarms.
/// Every ground-truth box lands in exactly one of `tp` / `unmatched_gt`, and
/// every prediction in exactly one of `tp` / `unmatched_pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub alpha: f64,
    pub tp: Vec<MatchedPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

/// Scores at a single IoU gate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AlphaScores {
    pub alpha: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub tp: usize,
    pub fn_count: usize,
    pub fp_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CountingSummary {
    pub cbyt: usize,
    pub cbyt_gt: usize,
    pub relative_error: f64,
}

/// Integrated tracking report: HOTA / DetA / AssA averaged over the 19 gates,
/// the per-gate scores, MOTA as a companion metric, and counting figures.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HotaReport {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub mota: f64,
    pub per_alpha: Vec<AlphaScores>,
    pub counting: CountingSummary,
}

fn frame_index(boxes: &[LabeledBox]) -> BTreeMap<Frame, Vec<usize>> {
    let mut by_frame: BTreeMap<Frame, Vec<usize>> = BTreeMap::new();
    for (i, b) in boxes.iter().enumerate() {
        by_frame.entry(b.frame).or_default().push(i);
    }
    for list in by_frame.values_mut() {
        list.sort_by_key(|&i| (boxes[i].track_id, i));
    }
    by_frame
}

fn id_counts(boxes: &[LabeledBox]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for b in boxes {
        *counts.entry(b.track_id).or_insert(0) += 1;
    }
    counts
}

fn gated(iou: f64, alpha: f64) -> bool {
    iou >= alpha - GATE_EPS
}

/// Per-frame one-to-one matching of predictions to ground truth under the
/// IoU >= alpha gate, selected by the two-pass strategy described at module
/// level.
pub fn match_alpha(pred: &[LabeledBox], gt: &[LabeledBox], alpha: f64) -> Result<MatchSet, MetricsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricsError::InvalidAlpha(alpha));
    }
    let gt_by_frame = frame_index(gt);
    let pred_by_frame = frame_index(pred);
    let gt_count = id_counts(gt);
    let pred_count = id_counts(pred);

    // Pass 1: count the frames in which each (gt id, pred id) pair could match.
    let mut potential: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (frame, gt_idx) in &gt_by_frame {
        let Some(pred_idx) = pred_by_frame.get(frame) else {
            continue;
        };
        for &gi in gt_idx {
            for &pi in pred_idx {
                if gated(gt[gi].bbox.iou(&pred[pi].bbox), alpha) {
                    *potential.entry((gt[gi].track_id, pred[pi].track_id)).or_insert(0) += 1;
                }
            }
        }
    }
    let alignment = |g: u32, p: u32| -> f64 {
        let pot = *potential.get(&(g, p)).unwrap_or(&0) as f64;
        let denom = (gt_count[&g] + pred_count[&p]) as f64 - pot;
        if denom <= 0.0 {
            0.0
        } else {
            pot / denom
        }
    };

    // Pass 2: per-frame assignment. Columns are the frame's predictions plus
    // one zero-cost slack column per ground-truth row, so leaving a row
    // unmatched is always feasible and gated pairs carry negative cost
    // (positive benefit).
    let mut tp = Vec::new();
    let mut unmatched_gt = Vec::new();
    let mut unmatched_pred = Vec::new();
    let frames: BTreeSet<Frame> =
        gt_by_frame.keys().chain(pred_by_frame.keys()).copied().collect();
    for frame in frames {
        let gt_idx = gt_by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let pred_idx = pred_by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        if gt_idx.is_empty() || pred_idx.is_empty() {
            unmatched_gt.extend_from_slice(gt_idx);
            unmatched_pred.extend_from_slice(pred_idx);
            continue;
        }
        let (rows, cols) = (gt_idx.len(), pred_idx.len());
        let costs = CostMatrix::from_fn(rows, cols + rows, |r, c| {
            if c >= cols {
                return 0.0;
            }
            let iou = gt[gt_idx[r]].bbox.iou(&pred[pred_idx[c]].bbox);
            if !gated(iou, alpha) {
                return 0.0;
            }
            let benefit = 1.0 + alignment(gt[gt_idx[r]].track_id, pred[pred_idx[c]].track_id) * POTENTIAL_SCALE + iou;
            -benefit
        })
        .expect("non-empty matrix");
        let solved = solve_assignment(&costs).expect("finite costs");

        let mut pred_taken = vec![false; cols];
        for &(r, c) in solved.pairs() {
            let (gi, matched) = (gt_idx[r], c < cols);
            if matched {
                let pi = pred_idx[c];
                let iou = gt[gi].bbox.iou(&pred[pi].bbox);
                if gated(iou, alpha) {
                    pred_taken[c] = true;
                    tp.push(MatchedPair {
                        frame,
                        gt_index: gi,
                        pred_index: pi,
                        gt_id: gt[gi].track_id,
                        pred_id: pred[pi].track_id,
                        iou,
                    });
                    continue;
                }
            }
            unmatched_gt.push(gi);
        }
        for (c, taken) in pred_taken.iter().enumerate() {
            if !taken {
                unmatched_pred.push(pred_idx[c]);
            }
        }
    }
    Ok(MatchSet { alpha, tp, unmatched_gt, unmatched_pred })
}

fn alpha_scores(pred: &[LabeledBox], gt: &[LabeledBox], alpha: f64) -> Result<AlphaScores, MetricsError> {
    let matches = match_alpha(pred, gt, alpha)?;
    let gt_count = id_counts(gt);
    let pred_count = id_counts(pred);

    // Matched-pair counts c(g, p); the association sets of a match (g, p)
    // have sizes |TPA| = c, |FNA| = |gt boxes of g| - c, |FPA| = |pred boxes
    // of p| - c.
    let mut pair_counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for m in &matches.tp {
        *pair_counts.entry((m.gt_id, m.pred_id)).or_insert(0) += 1;
    }
    let mut association_sum = 0.0;
    for (&(g, p), &c) in &pair_counts {
        let tpa = c as f64;
        let fna = gt_count[&g] as f64 - tpa;
        let fpa = pred_count[&p] as f64 - tpa;
        association_sum += tpa * (tpa / (tpa + fna + fpa));
    }

    let tp = matches.tp.len();
    let fn_count = matches.unmatched_gt.len();
    let fp_count = matches.unmatched_pred.len();
    let denom = (tp + fn_count + fp_count) as f64;
    let deta = if denom > 0.0 { tp as f64 / denom } else { 0.0 };
    let assa = if tp > 0 { association_sum / tp as f64 } else { 0.0 };
    let hota = if denom > 0.0 { (association_sum / denom).sqrt() } else { 0.0 };
    Ok(AlphaScores { alpha, hota, deta, assa, tp, fn_count, fp_count })
}

/// Full HOTA report over the 19 gates, with MOTA and counting figures.
pub fn hota(pred: &[LabeledBox], gt: &[LabeledBox]) -> Result<HotaReport, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let per_alpha: Vec<AlphaScores> =
        HOTA_ALPHAS.iter().map(|&a| alpha_scores(pred, gt, a)).collect::<Result<_, _>>()?;
    let n = per_alpha.len() as f64;
    let hota = per_alpha.iter().map(|s| s.hota).sum::<f64>() / n;
    let deta = per_alpha.iter().map(|s| s.deta).sum::<f64>() / n;
    let assa = per_alpha.iter().map(|s| s.assa).sum::<f64>() / n;
    let mota = mota(pred, gt, 0.5)?;

    let cbyt = id_counts(pred).len();
    let cbyt_gt = id_counts(gt).len();
    let relative_error = counting_error(cbyt, cbyt_gt)?;
    Ok(HotaReport {
        hota,
        deta,
        assa,
        mota,
        per_alpha,
        counting: CountingSummary { cbyt, cbyt_gt, relative_error },
    })
}

/// CLEAR multiple-object tracking accuracy with greedy match persistence:
/// `1 - (FN + FP + IDSW) / |gt|`. May be negative.
pub fn mota(pred: &[LabeledBox], gt: &[LabeledBox], iou_threshold: f64) -> Result<f64, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let gt_by_frame = frame_index(gt);
    let pred_by_frame = frame_index(pred);
    let frames: BTreeSet<Frame> = gt_by_frame.keys().chain(pred_by_frame.keys()).copied().collect();

    let mut last_match: BTreeMap<u32, u32> = BTreeMap::new();
    let (mut fn_count, mut fp_count, mut idsw) = (0usize, 0usize, 0usize);
    let gt_total = gt.len();

    for frame in frames {
        let gt_idx = gt_by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let pred_idx = pred_by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);

        let mut free_gt: Vec<usize> = Vec::new();
        let mut pred_used = vec![false; pred_idx.len()];
        let mut frame_matches: Vec<(usize, usize)> = Vec::new(); // (gt idx, pred pos)

        // Persist previous matches first.
        for &gi in gt_idx {
            let gid = gt[gi].track_id;
            let mut carried = None;
            if let Some(&pid) = last_match.get(&gid) {
                for (pos, &pi) in pred_idx.iter().enumerate() {
                    if !pred_used[pos]
                        && pred[pi].track_id == pid
                        && gt[gi].bbox.iou(&pred[pi].bbox) >= iou_threshold
                    {
                        carried = Some(pos);
                        break;
                    }
                }
            }
            match carried {
                Some(pos) => {
                    pred_used[pos] = true;
                    frame_matches.push((gi, pos));
                }
                None => free_gt.push(gi),
            }
        }

        // Match the rest by minimum 1 - IoU, gated at the threshold.
        let free_pred: Vec<usize> = (0..pred_idx.len()).filter(|&p| !pred_used[p]).collect();
        if !free_gt.is_empty() && !free_pred.is_empty() {
            let (rows, cols) = (free_gt.len(), free_pred.len());
            let costs = CostMatrix::from_fn(rows, cols + rows, |r, c| {
                if c >= cols {
                    return 0.0;
                }
                let iou = gt[free_gt[r]].bbox.iou(&pred[pred_idx[free_pred[c]]].bbox);
                if iou >= iou_threshold {
                    -iou
                } else {
                    0.0
                }
            })
            .expect("non-empty");
            for &(r, c) in solve_assignment(&costs).expect("finite").pairs() {
                if c < cols {
                    let pos = free_pred[c];
                    let iou = gt[free_gt[r]].bbox.iou(&pred[pred_idx[pos]].bbox);
                    if iou >= iou_threshold {
                        pred_used[pos] = true;
                        frame_matches.push((free_gt[r], pos));
                    }
                }
            }
        }

        let matched_gt: BTreeSet<usize> = frame_matches.iter().map(|&(gi, _)| gi).collect();
        fn_count += gt_idx.iter().filter(|gi| !matched_gt.contains(gi)).count();
        fp_count += pred_used.iter().filter(|used| !**used).count();
        for &(gi, pos) in &frame_matches {
            let gid = gt[gi].track_id;
            let pid = pred[pred_idx[pos]].track_id;
            if let Some(prev) = last_match.insert(gid, pid) {
                if prev != pid {
                    idsw += 1;
                }
            }
        }
    }

    Ok(1.0 - (fn_count + fp_count + idsw) as f64 / gt_total as f64)
}

/// Relative counting error: |counted - ground truth| / ground truth.
pub fn counting_error(cbyt: usize, gt: usize) -> Result<f64, MetricsError> {
    if gt == 0 {
        return Err(MetricsError::ZeroGroundTruth);
    }
    Ok((cbyt as f64 - gt as f64).abs() / gt as f64)
}

/// Drop ground-truth rows at or below the visibility threshold (the dataset
/// convention treats a fruit as non-occluded only when more than half of it
/// is visible).
pub fn filter_gt_visibility(gt: &[LabeledBox], min_visible: f64) -> Vec<LabeledBox> {
    gt.iter().filter(|b| b.visibility > min_visible).cloned().collect()
}
