//! Multiple-orange tracking: relocalization of lost tracks via sphere
//! reprojection, IoU-based next-frame association, track lifecycle, and fruit
//! counting.
//!
//! Processing one frame `i` runs relocalization first (lost tracks with
//! estimated spheres reclaim unowned detections in frame `i`), then
//! associates the detections of frames `i` and `i+1`. Tracks matched into
//! `i+1` stay active and, past the minimum length, get their spheres
//! (re-)estimated; unmatched active tracks turn lost. Only sphere-bearing
//! tracks count as fruits.

use crate::assignment::{associate_boxes, associate_boxes_with_gate};
use crate::geometry::{BoundingBox, CameraMatrix, Frame};
use crate::metrics::LabeledBox;
use crate::sphere::{estimate_orange, reproject_sphere, SphereError, SphereEstimate, TrackObservations};
use crate::sphere::RansacParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame {0} has detections but no camera matrix")]
    MissingCamera(Frame),
    #[error("detection frames must be strictly increasing (saw {0} then {1})")]
    NonIncreasingFrames(Frame, Frame),
    #[error(transparent)]
    Sphere(#[from] SphereError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Lost,
}

/// One identity-carrying track. `id` is assigned on first successful sphere
/// estimation; provisional tracks keep `None` (the Nil label) and are never
/// counted.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: Option<u32>,
    pub state: TrackState,
    pub observations: TrackObservations,
    pub sphere: Option<SphereEstimate>,
}

/// Detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame: Frame,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub ransac: RansacParams,
    /// Ray correction constant `c` applied to the median ray estimate.
    pub ray_correction: f64,
    pub f_focal: f64,
    pub image_width: f64,
    pub image_height: f64,
    /// Minimum IoU for a relocalization match; 0 keeps the strict
    /// remove-only-zero-overlap behavior.
    pub reloc_min_iou: f64,
    /// Disabling relocalization turns the tracker into the
    /// short-term-association ablation.
    pub relocalization: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            ray_correction: 0.9,
            f_focal: 1000.0,
            image_width: 1080.0,
            image_height: 1920.0,
            reloc_min_iou: 0.0,
            relocalization: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub tracks: Vec<Track>,
    /// Number of tracks with a successfully estimated sphere.
    pub count: usize,
    pub per_frame_active: BTreeMap<Frame, usize>,
}

/// Stateful tracker over one frame sequence.
pub struct Tracker<'a> {
    cams: &'a BTreeMap<Frame, CameraMatrix>,
    cfg: &'a TrackerConfig,
    tracks: Vec<Track>,
    next_id: u32,
}

impl<'a> Tracker<'a> {
    pub fn new(cams: &'a BTreeMap<Frame, CameraMatrix>, cfg: &'a TrackerConfig) -> Self {
        Self { cams, cfg, tracks: Vec::new(), next_id: 1 }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Insert an externally constructed track (test scaffolding for
    /// relocalization scenarios).
    pub fn push_track(&mut self, track: Track) -> usize {
        self.tracks.push(track);
        self.tracks.len() - 1
    }

    /// Match lost, sphere-bearing tracks against the detections of `dets`
    /// not yet owned by any track. Matched tracks append the detection box
    /// and turn active. Returns the (track index, box index) matches.
    pub fn relocalize(
        &mut self,
        dets: &FrameDetections,
        owner: &mut [Option<usize>],
    ) -> Result<Vec<(usize, usize)>, TrackerError> {
        let cam = self.cams.get(&dets.frame).ok_or(TrackerError::MissingCamera(dets.frame))?;

        let mut candidates: Vec<(usize, BoundingBox)> = Vec::new();
        for (t_idx, track) in self.tracks.iter().enumerate() {
            if track.state != TrackState::Lost {
                continue;
            }
            let Some(sphere) = &track.sphere else {
                continue;
            };
            if let Some(reproj) =
                reproject_sphere(sphere, cam, self.cfg.f_focal, self.cfg.image_width, self.cfg.image_height)
            {
                candidates.push((t_idx, reproj));
            }
        }

        let unclaimed: Vec<usize> = (0..dets.boxes.len()).filter(|&j| owner[j].is_none()).collect();
        if candidates.is_empty() || unclaimed.is_empty() {
            return Ok(Vec::new());
        }
        let reproj_boxes: Vec<BoundingBox> = candidates.iter().map(|(_, b)| *b).collect();
        let det_boxes: Vec<BoundingBox> = unclaimed.iter().map(|&j| dets.boxes[j]).collect();
        let matches = associate_boxes_with_gate(&reproj_boxes, &det_boxes, self.cfg.reloc_min_iou);

        let mut out = Vec::with_capacity(matches.len());
        for &(p, q) in matches.pairs() {
            let (t_idx, _) = candidates[p];
            let box_idx = unclaimed[q];
            let track = &mut self.tracks[t_idx];
            track
                .observations
                .insert(dets.frame, dets.boxes[box_idx])
                .expect("lost track has no box in the current frame");
            track.state = TrackState::Active;
            owner[box_idx] = Some(t_idx);
            out.push((t_idx, box_idx));
        }
        Ok(out)
    }

    /// Associate the detections of two consecutive frames. Matches extend the
    /// owning active track or found a new two-box track; unmatched active
    /// tracks turn lost; surviving active tracks past the minimum length get
    /// their spheres re-estimated. Returns the ownership of `dets_next`.
    pub fn associate_next(
        &mut self,
        dets_i: &FrameDetections,
        owner_i: &[Option<usize>],
        dets_next: &FrameDetections,
    ) -> Result<Vec<Option<usize>>, TrackerError> {
        let matches = associate_boxes(&dets_i.boxes, &dets_next.boxes);
        let mut owner_next: Vec<Option<usize>> = vec![None; dets_next.boxes.len()];
        let mut matched_tracks: BTreeSet<usize> = BTreeSet::new();

        for &(p, q) in matches.pairs() {
            let t_idx = match owner_i[p] {
                Some(t) => {
                    debug_assert_eq!(self.tracks[t].state, TrackState::Active);
                    self.tracks[t]
                        .observations
                        .insert(dets_next.frame, dets_next.boxes[q])
                        .expect("one box per frame per track");
                    t
                }
                None => {
                    let mut obs = TrackObservations::new();
                    obs.insert(dets_i.frame, dets_i.boxes[p]).expect("fresh track");
                    obs.insert(dets_next.frame, dets_next.boxes[q]).expect("fresh track");
                    self.tracks.push(Track {
                        id: None,
                        state: TrackState::Active,
                        observations: obs,
                        sphere: None,
                    });
                    self.tracks.len() - 1
                }
            };
            owner_next[q] = Some(t_idx);
            matched_tracks.insert(t_idx);
        }

        for (t_idx, track) in self.tracks.iter_mut().enumerate() {
            if track.state == TrackState::Active && !matched_tracks.contains(&t_idx) {
                track.state = TrackState::Lost;
            }
        }

        for &t_idx in &matched_tracks {
            let track = &self.tracks[t_idx];
            if track.observations.len() <= self.cfg.ransac.min_track_len {
                continue;
            }
            let estimated = estimate_orange(
                &track.observations,
                self.cams,
                self.cfg.f_focal,
                self.cfg.ray_correction,
                &self.cfg.ransac,
            )?;
            // A failed re-estimation keeps the previous sphere.
            if let Some(sphere) = estimated {
                let track = &mut self.tracks[t_idx];
                track.sphere = Some(sphere);
                if track.id.is_none() {
                    track.id = Some(self.next_id);
                    self.next_id += 1;
                }
            }
        }
        Ok(owner_next)
    }

    pub fn finish(self) -> TrackingResult {
        let count = self.tracks.iter().filter(|t| t.sphere.is_some()).count();
        let mut per_frame_active: BTreeMap<Frame, usize> = BTreeMap::new();
        for track in &self.tracks {
            for (frame, _) in track.observations.iter() {
                *per_frame_active.entry(frame).or_insert(0) += 1;
            }
        }
        TrackingResult { tracks: self.tracks, count, per_frame_active }
    }
}

/// Run the tracker over a full detection sequence: for each frame,
/// relocalization then next-frame association, with a final relocalization
/// pass on the last frame so fruits reappearing there still re-attach.
pub fn run(
    seq: &[FrameDetections],
    cams: &BTreeMap<Frame, CameraMatrix>,
    cfg: &TrackerConfig,
) -> Result<TrackingResult, TrackerError> {
    for pair in seq.windows(2) {
        if pair[1].frame <= pair[0].frame {
            return Err(TrackerError::NonIncreasingFrames(pair[0].frame, pair[1].frame));
        }
    }
    for dets in seq {
        if !dets.boxes.is_empty() && !cams.contains_key(&dets.frame) {
            return Err(TrackerError::MissingCamera(dets.frame));
        }
    }

    let mut tracker = Tracker::new(cams, cfg);
    let mut owner: Vec<Option<usize>> = match seq.first() {
        Some(first) => vec![None; first.boxes.len()],
        None => return Ok(tracker.finish()),
    };
    for i in 0..seq.len() {
        if cfg.relocalization && cams.contains_key(&seq[i].frame) {
            tracker.relocalize(&seq[i], &mut owner)?;
        }
        if i + 1 < seq.len() {
            owner = tracker.associate_next(&seq[i], &owner, &seq[i + 1])?;
        }
    }
    Ok(tracker.finish())
}

/// Per-box uniform keep decision; shared by the frame-level and row-level
/// degrade paths so both consume draws identically.
pub(crate) struct KeepSampler {
    rng: ChaCha8Rng,
    rate: f64,
}

impl KeepSampler {
    pub(crate) fn new(rate: f64, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), rate }
    }

    pub(crate) fn keep(&mut self) -> bool {
        if self.rate >= 1.0 {
            return true;
        }
        self.rng.random::<f64>() < self.rate
    }
}

/// Detection-rate degradation: each box is kept iff its uniform draw falls
/// under `rate`. Rate 1 copies the input; rate 0 empties every frame.
pub fn degrade_detections(gt: &[FrameDetections], rate: f64, seed: u64) -> Vec<FrameDetections> {
    let mut sampler = KeepSampler::new(rate, seed);
    gt.iter()
        .map(|fd| FrameDetections {
            frame: fd.frame,
            boxes: fd.boxes.iter().filter(|_| sampler.keep()).copied().collect(),
        })
        .collect()
}

/// Expand labeled ground-truth boxes into a dense per-frame detection
/// sequence covering frames `1..=n_frames` (identities are dropped).
pub fn frame_detections_from_labeled(boxes: &[LabeledBox], n_frames: usize) -> Vec<FrameDetections> {
    let mut seq: Vec<FrameDetections> =
        (1..=n_frames).map(|frame| FrameDetections { frame, boxes: Vec::new() }).collect();
    for b in boxes {
        if b.frame >= 1 && b.frame <= n_frames {
            seq[b.frame - 1].boxes.push(b.bbox);
        }
    }
    seq
}

/// MOT-style rows of the counted (id-bearing) tracks, ordered frame-major
/// then id-major.
pub fn result_to_labeled(result: &TrackingResult) -> Vec<LabeledBox> {
    let mut out = Vec::new();
    for track in &result.tracks {
        let Some(id) = track.id else {
            continue;
        };
        for (frame, bbox) in track.observations.iter() {
            out.push(LabeledBox::new(frame, id, *bbox, 1.0).expect("valid track rows"));
        }
    }
    out.sort_by_key(|b| (b.frame, b.track_id));
    out
}
