//! Detection post-processing: greedy non-maximum suppression, merging of
//! tiled detections back into frame coordinates, and stride-based frame
//! resampling.

use super::IoFormatError;
use crate::geometry::{BoundingBox, Frame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Detections of one tile plus the tile's offset in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TileDetections {
    pub offset: (f64, f64),
    pub boxes: Vec<ScoredBox>,
}

/// Greedy non-maximum suppression: walk boxes by descending score, keep a box
/// unless it overlaps an already kept one with IoU above the threshold.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.partial_cmp(&boxes[a].score).unwrap());
    let mut kept: Vec<ScoredBox> = Vec::new();
    for idx in order {
        let candidate = boxes[idx];
        if kept.iter().all(|k| k.bbox.iou(&candidate.bbox) <= iou_threshold) {
            kept.push(candidate);
        }
    }
    kept
}

/// Translate per-tile detections into frame coordinates, concatenate, and
/// suppress duplicates from overlapping tiles.
pub fn merge_tiles(
    tiles: &[TileDetections],
    frame_width: f64,
    frame_height: f64,
    nms_iou: f64,
) -> Result<Vec<ScoredBox>, IoFormatError> {
    let mut all = Vec::new();
    for tile in tiles {
        let (ox, oy) = tile.offset;
        if ox < 0.0 || oy < 0.0 || ox >= frame_width || oy >= frame_height {
            return Err(IoFormatError::OffsetOutOfFrame { x: ox, y: oy });
        }
        for sb in &tile.boxes {
            let moved = BoundingBox::new(sb.bbox.x + ox, sb.bbox.y + oy, sb.bbox.width, sb.bbox.height)
                .expect("translation keeps boxes valid");
            all.push(ScoredBox { bbox: moved, score: sb.score });
        }
    }
    Ok(nms(&all, nms_iou))
}

/// Keep every `stride`-th frame starting at the first, re-indexing the
/// survivors sequentially from 1. Returns (new index, original index) pairs.
pub fn stride_sample(frames: &[Frame], stride: usize) -> Result<Vec<(Frame, Frame)>, IoFormatError> {
    if stride == 0 {
        return Err(IoFormatError::InvalidStride);
    }
    Ok(frames
        .iter()
        .step_by(stride)
        .enumerate()
        .map(|(i, &orig)| (i + 1, orig))
        .collect())
}
