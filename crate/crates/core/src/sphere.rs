//! Per-fruit 3-D sphere estimation from a (possibly discontinuous) track:
//! consensus triangulation of the center over box centroids, then a
//! similar-triangles ray estimate from the box dimensions.

use crate::geometry::{
    camera_center, dlt_triangulate, point_depth, project, reprojection_error, BoundingBox, CameraMatrix, Frame,
    GeometryError, Pixel, Point3,
};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SphereError {
    #[error("track frame {0} has no camera matrix")]
    MissingCamera(Frame),
    #[error("track must contain at least one box")]
    EmptyTrack,
    #[error("duplicate box for frame {0}")]
    DuplicateFrame(Frame),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The boxes of one track, at most one per frame, keyed by frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackObservations {
    boxes: BTreeMap<Frame, BoundingBox>,
}

impl TrackObservations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_boxes(boxes: impl IntoIterator<Item = (Frame, BoundingBox)>) -> Result<Self, SphereError> {
        let mut out = Self::new();
        for (frame, b) in boxes {
            out.insert(frame, b)?;
        }
        if out.is_empty() {
            return Err(SphereError::EmptyTrack);
        }
        Ok(out)
    }

    pub fn insert(&mut self, frame: Frame, b: BoundingBox) -> Result<(), SphereError> {
        if self.boxes.insert(frame, b).is_some() {
            return Err(SphereError::DuplicateFrame(frame));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, frame: Frame) -> Option<&BoundingBox> {
        self.boxes.get(&frame)
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        self.boxes.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Frame, &BoundingBox)> {
        self.boxes.iter().map(|(f, b)| (*f, b))
    }

    pub fn first_frame(&self) -> Option<Frame> {
        self.boxes.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<Frame> {
        self.boxes.keys().next_back().copied()
    }
}

/// Estimated 3-D center and ray of one fruit, plus the frames whose boxes
/// supported the consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereEstimate {
    pub center: Point3,
    pub ray: f64,
    pub inlier_frames: BTreeSet<Frame>,
}

/// Consensus-triangulation parameters. The sampling is a deterministic
/// exhaustive walk over 3-box combinations in lexicographic frame order, so
/// re-running with identical inputs yields identical outputs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RansacParams {
    /// Maximum reprojection error (px) for a box centroid to count as inlier.
    pub max_geom_error: f64,
    /// Minimum inlier fraction |I| / |T| required for consensus.
    pub inliers_ratio: f64,
    /// Maximum number of scored samples before giving up.
    pub max_iters: usize,
    /// Minimum number of boxes a track needs before the tracker attempts
    /// estimation (the estimator itself only needs 3).
    pub min_track_len: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { max_geom_error: 8.0, inliers_ratio: 0.5, max_iters: 500, min_track_len: 5 }
    }
}

/// Consensus triangulation of the track's 3-D point over 3-box samples.
///
/// Walks 3-combinations of the track's boxes in lexicographic frame order,
/// triangulates each sample by DLT, scores reprojection errors against every
/// box centroid and, on reaching the inlier ratio, re-triangulates from all
/// inliers. Returns `None` after `max_iters` scored samples or exhaustion.
pub fn ransac_triangulation(
    track: &TrackObservations,
    cams: &BTreeMap<Frame, CameraMatrix>,
    params: &RansacParams,
) -> Result<Option<(Point3, BTreeSet<Frame>)>, SphereError> {
    let frames: Vec<Frame> = track.frames().collect();
    for &f in &frames {
        if !cams.contains_key(&f) {
            return Err(SphereError::MissingCamera(f));
        }
    }
    let centroids: BTreeMap<Frame, Pixel> = track.iter().map(|(f, b)| (f, b.centroid())).collect();

    let n = frames.len();
    let mut scored = 0usize;
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                let sample = [frames[a], frames[b], frames[c]];
                let obs: Vec<(Pixel, &CameraMatrix)> = sample.iter().map(|f| (centroids[f], &cams[f])).collect();
                let Some(candidate) = dlt_triangulate(&obs)? else {
                    continue;
                };

                let mut inliers = BTreeSet::new();
                for &f in &frames {
                    let err = match reprojection_error(&cams[&f], &candidate, &centroids[&f]) {
                        Ok(e) => e,
                        Err(GeometryError::DegenerateProjection(_)) => f64::INFINITY,
                        Err(e) => return Err(e.into()),
                    };
                    if err <= params.max_geom_error {
                        inliers.insert(f);
                    }
                }

                if inliers.len() as f64 / n as f64 >= params.inliers_ratio {
                    let refit_obs: Vec<(Pixel, &CameraMatrix)> =
                        inliers.iter().map(|f| (centroids[f], &cams[f])).collect();
                    if let Some(center) = dlt_triangulate(&refit_obs)? {
                        return Ok(Some((center, inliers)));
                    }
                }

                scored += 1;
                if scored >= params.max_iters {
                    return Ok(None);
                }
            }
        }
    }
    Ok(None)
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Estimate the fruit's center and ray from a track.
///
/// The center comes from [`ransac_triangulation`]. Each inlier box then
/// yields a ray estimate `d * r_i / f_focal`, with `r_i = max(height, width) / 2`
/// and `d` the distance from the camera center to the fruit center; the final
/// ray is `c` times the median of those estimates.
pub fn estimate_orange(
    track: &TrackObservations,
    cams: &BTreeMap<Frame, CameraMatrix>,
    f_focal: f64,
    c: f64,
    params: &RansacParams,
) -> Result<Option<SphereEstimate>, SphereError> {
    let Some((center, inliers)) = ransac_triangulation(track, cams, params)? else {
        return Ok(None);
    };
    if inliers.len() < 3 {
        return Ok(None);
    }
    let mut estimates = Vec::with_capacity(inliers.len());
    for &f in &inliers {
        let b = track.get(f).expect("inliers come from track frames");
        let r_2d = b.height.max(b.width) / 2.0;
        let cam_center = camera_center(&cams[&f])?;
        let d = (center - cam_center).norm();
        estimates.push(d * r_2d / f_focal);
    }
    let ray = c * median(&mut estimates);
    if !(ray > 0.0) {
        return Ok(None);
    }
    Ok(Some(SphereEstimate { center, ray, inlier_frames: inliers }))
}

/// Image box of a sphere seen by a camera: a square of half-width
/// `f_focal * ray / d` centered on the projected center, `d` being the
/// camera-to-center distance. `None` when the sphere is behind the camera,
/// the projection is degenerate, or the box lies fully outside the image.
pub fn sphere_image_box(
    center: &Point3,
    ray: f64,
    cam: &CameraMatrix,
    f_focal: f64,
    image_width: f64,
    image_height: f64,
) -> Option<BoundingBox> {
    if point_depth(cam, center) <= 0.0 {
        return None;
    }
    let px = project(cam, center).ok()?;
    let cam_center = camera_center(cam).ok()?;
    let d = (center - cam_center).norm();
    if d <= 0.0 {
        return None;
    }
    let r = f_focal * ray / d;
    let b = BoundingBox::new(px.x - r, px.y - r, 2.0 * r, 2.0 * r).ok()?;
    if !b.intersects_image(image_width, image_height) {
        return None;
    }
    Some(b)
}

/// Reprojected bounding box of an estimated sphere on a frame.
pub fn reproject_sphere(
    est: &SphereEstimate,
    cam: &CameraMatrix,
    f_focal: f64,
    image_width: f64,
    image_height: f64,
) -> Option<BoundingBox> {
    sphere_image_box(&est.center, est.ray, cam, f_focal, image_width, image_height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::look_at_camera;
    use approx::assert_relative_eq;

    const F: f64 = 1000.0;
    const W: f64 = 1080.0;
    const H: f64 = 1920.0;

    /// Cameras on a lateral sweep looking at the canopy center.
    fn sweep_cams(n: usize) -> BTreeMap<Frame, CameraMatrix> {
        (1..=n)
            .map(|f| {
                let x = -1.0 + 2.0 * (f as f64 - 1.0) / (n as f64 - 1.0);
                let eye = Point3::new(x, 0.1 * x, 0.0);
                (f, look_at_camera(eye, Point3::new(0.0, 0.0, 2.0), F, W / 2.0, H / 2.0, f))
            })
            .collect()
    }

    /// Exact track of a sphere: every box is the true image box.
    fn exact_track(center: Point3, ray: f64, cams: &BTreeMap<Frame, CameraMatrix>) -> TrackObservations {
        let boxes = cams.iter().filter_map(|(f, cam)| {
            sphere_image_box(&center, ray, cam, F, W, H).map(|b| (*f, b))
        });
        TrackObservations::from_boxes(boxes).unwrap()
    }

    #[test]
    fn exact_observations_reach_full_consensus() {
        let cams = sweep_cams(8);
        let center = Point3::new(0.2, -0.1, 2.0);
        let track = exact_track(center, 0.04, &cams);
        assert_eq!(track.len(), 8);
        let (rec, inliers) = ransac_triangulation(&track, &cams, &RansacParams::default())
            .unwrap()
            .expect("consensus");
        assert!((rec - center).norm() / center.coords.norm() <= 1e-6);
        assert_eq!(inliers.len(), 8);
    }

    #[test]
    fn corrupted_centroids_are_excluded() {
        let cams = sweep_cams(8);
        let center = Point3::new(0.2, -0.1, 2.0);
        let mut track = exact_track(center, 0.04, &cams);
        // Shift two boxes by +50 px, well past the 8 px inlier gate.
        for f in [3usize, 6] {
            let b = *track.get(f).unwrap();
            let shifted = BoundingBox::new(b.x + 50.0, b.y, b.width, b.height).unwrap();
            track.boxes.insert(f, shifted);
        }
        let (rec, inliers) = ransac_triangulation(&track, &cams, &RansacParams::default())
            .unwrap()
            .expect("consensus");
        assert!(!inliers.contains(&3) && !inliers.contains(&6));
        assert_eq!(inliers.len(), 6);
        assert!((rec - center).norm() / center.coords.norm() <= 1e-4);
    }

    #[test]
    fn coincident_cameras_yield_nil() {
        let cam = look_at_camera(Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), F, W / 2.0, H / 2.0, 1);
        let mut cams = BTreeMap::new();
        for f in 1..=3usize {
            let mut c = cam.clone();
            c = CameraMatrix::new(*c.matrix(), f).unwrap();
            cams.insert(f, c);
        }
        let b = BoundingBox::new(500.0, 900.0, 40.0, 40.0).unwrap();
        let track = TrackObservations::from_boxes((1..=3).map(|f| (f, b))).unwrap();
        let out = ransac_triangulation(&track, &cams, &RansacParams::default()).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn missing_camera_is_an_error() {
        let cams = sweep_cams(3);
        let b = BoundingBox::new(500.0, 900.0, 40.0, 40.0).unwrap();
        let track = TrackObservations::from_boxes([(1, b), (2, b), (9, b)]).unwrap();
        assert_eq!(
            ransac_triangulation(&track, &cams, &RansacParams::default()).unwrap_err(),
            SphereError::MissingCamera(9)
        );
    }

    #[test]
    fn ray_recovered_from_exact_boxes() {
        let cams = sweep_cams(8);
        let center = Point3::new(0.2, -0.1, 2.0);
        let track = exact_track(center, 0.04, &cams);
        let est = estimate_orange(&track, &cams, F, 1.0, &RansacParams::default())
            .unwrap()
            .expect("estimate");
        assert!((est.ray - 0.04).abs() / 0.04 <= 0.02);
        assert_eq!(est.inlier_frames.len(), 8);
    }

    #[test]
    fn ray_correction_constant_scales_median() {
        let cams = sweep_cams(8);
        let center = Point3::new(0.2, -0.1, 2.0);
        let track = exact_track(center, 0.04, &cams);
        let plain = estimate_orange(&track, &cams, F, 1.0, &RansacParams::default()).unwrap().unwrap();
        let scaled = estimate_orange(&track, &cams, F, 0.9, &RansacParams::default()).unwrap().unwrap();
        assert_relative_eq!(scaled.ray, 0.9 * plain.ray, epsilon = 1e-12);
    }

    #[test]
    fn short_track_yields_nil() {
        let cams = sweep_cams(2);
        let center = Point3::new(0.2, -0.1, 2.0);
        let track = exact_track(center, 0.04, &cams);
        assert_eq!(track.len(), 2);
        let out = estimate_orange(&track, &cams, F, 1.0, &RansacParams::default()).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn single_inlier_substitution() {
        // r_i = 10 px, d = 2, f = 1000 gives a ray estimate of 0.02.
        assert_relative_eq!(2.0 * 10.0 / 1000.0, 0.02);
    }

    #[test]
    fn reproject_on_axis_sphere_is_centered_square() {
        let cam = look_at_camera(Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), F, W / 2.0, H / 2.0, 1);
        let b = sphere_image_box(&Point3::new(0.0, 0.0, 2.0), 0.04, &cam, F, W, H).unwrap();
        assert_relative_eq!(b.centroid().x, W / 2.0, epsilon = 1e-9);
        assert_relative_eq!(b.centroid().y, H / 2.0, epsilon = 1e-9);
        assert_relative_eq!(b.width, b.height);
        assert_relative_eq!(b.width, 2.0 * F * 0.04 / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn sphere_behind_camera_is_nil() {
        let cam = look_at_camera(Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), F, W / 2.0, H / 2.0, 1);
        assert!(sphere_image_box(&Point3::new(0.0, 0.0, -2.0), 0.04, &cam, F, W, H).is_none());
    }

    #[test]
    fn sphere_far_outside_fov_is_nil() {
        let cam = look_at_camera(Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), F, W / 2.0, H / 2.0, 1);
        assert!(sphere_image_box(&Point3::new(50.0, 0.0, 2.0), 0.04, &cam, F, W, H).is_none());
    }

    #[test]
    fn estimate_then_reproject_round_trip() {
        let cams = sweep_cams(8);
        let center = Point3::new(0.2, -0.1, 2.0);
        let ray = 0.04;
        let track = exact_track(center, ray, &cams);
        let est = estimate_orange(&track, &cams, F, 1.0, &RansacParams::default()).unwrap().unwrap();
        for (f, gt_box) in track.iter() {
            let re = reproject_sphere(&est, &cams[&f], F, W, H).expect("in view");
            assert!(re.iou(gt_box) >= 0.8, "frame {f}: IoU {}", re.iou(gt_box));
            assert!((re.width / 2.0 - gt_box.width / 2.0).abs() / (gt_box.width / 2.0) <= 0.10);
        }
    }

    #[test]
    fn outlier_added_to_consensused_track_is_excluded() {
        let cams = sweep_cams(9);
        let center = Point3::new(0.2, -0.1, 2.0);
        let full = exact_track(center, 0.04, &cams);
        let clean = TrackObservations::from_boxes(full.iter().take(8).map(|(f, b)| (f, *b))).unwrap();
        let (base, _) = ransac_triangulation(&clean, &cams, &RansacParams::default()).unwrap().unwrap();

        let mut noisy = clean.clone();
        let last = *full.get(9).unwrap();
        noisy
            .insert(9, BoundingBox::new(last.x + 80.0, last.y + 40.0, last.width, last.height).unwrap())
            .unwrap();
        let (with_outlier, inliers) = ransac_triangulation(&noisy, &cams, &RansacParams::default()).unwrap().unwrap();
        assert!(!inliers.contains(&9));
        assert!((with_outlier - base).norm() <= 1e-9);
    }
}
