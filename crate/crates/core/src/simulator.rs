//! Synthetic-orchard scene generation: spheres in a canopy volume, a camera
//! path sweeping past them, and occlusion-aware visible ground-truth boxes.
//! The generated scenes back the geometric round-trip tests and the
//! detection-rate sensitivity protocol.

use crate::geometry::{camera_center, project, CameraMatrix, Frame, Pixel, Point3};
use crate::metrics::LabeledBox;
use crate::sphere::sphere_image_box;
use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Samples per axis when integrating disk coverage.
const OCCLUSION_GRID: usize = 128;
/// Rejection-sampling budget per requested sphere.
const PLACEMENT_ATTEMPTS_PER_SPHERE: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place {placed} of {requested} spheres without overlap")]
    InfeasiblePlacement { placed: usize, requested: usize },
}

/// Pinhole intrinsics shared by every frame of a generated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub f_focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        // Portrait smartphone-like geometry.
        Self { f_focal: 1000.0, cx: 540.0, cy: 960.0, width: 1080.0, height: 1920.0 }
    }
}

/// Camera trajectory specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CameraPath {
    /// Serpentine sweep: `rows` stacked horizontal passes (bottom first),
    /// standing `standoff` in front of the canopy, oriented at its centroid.
    Sweep { rows: usize, standoff: f64, margin: f64 },
    /// Circular arc of the given radius around the canopy centroid in the
    /// horizontal plane, spanning `angle_span` radians.
    Arc { radius: f64, angle_span: f64 },
}

impl Default for CameraPath {
    fn default() -> Self {
        CameraPath::Sweep { rows: 3, standoff: 1.6, margin: 0.0 }
    }
}

/// Random "blackout" intervals per sphere, standing in for leaves and
/// branches hiding a fruit for a stretch of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackoutConfig {
    pub events_per_sphere: f64,
    pub duration_range: (usize, usize),
}

impl Default for BlackoutConfig {
    fn default() -> Self {
        Self { events_per_sphere: 1.2, duration_range: (4, 10) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_spheres: usize,
    pub radius_range: (f64, f64),
    pub canopy_min: [f64; 3],
    pub canopy_max: [f64; 3],
    pub path: CameraPath,
    pub n_frames: usize,
    pub intrinsics: Intrinsics,
    pub occlusion: BlackoutConfig,
    /// Placement rejects sphere pairs closer than this multiple of the sum
    /// of their rays (1 = touching allowed).
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_spheres: 150,
            radius_range: (0.03, 0.05),
            canopy_min: [-1.2, -1.0, 1.6],
            canopy_max: [1.2, 1.0, 2.4],
            path: CameraPath::default(),
            n_frames: 300,
            intrinsics: Intrinsics::default(),
            occlusion: BlackoutConfig::default(),
            min_separation: 2.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub ray: f64,
}

impl Sphere {
    pub fn center_point(&self) -> Point3 {
        Point3::new(self.center[0], self.center[1], self.center[2])
    }
}

/// A generated scene: sphere ground truth, per-frame cameras, and the
/// visible-box annotation stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub config: SceneConfig,
    pub spheres: Vec<Sphere>,
    pub cams: BTreeMap<Frame, CameraMatrix>,
    pub gt_boxes: Vec<LabeledBox>,
}

impl GroundTruthScene {
    /// Number of distinct sphere ids that appear in the visible ground truth.
    pub fn visible_sphere_count(&self) -> usize {
        let ids: std::collections::BTreeSet<u32> = self.gt_boxes.iter().map(|b| b.track_id).collect();
        ids.len()
    }
}

/// Build `P = K [R | t]` for a camera at `eye` oriented toward `target`.
pub fn look_at_camera(eye: Point3, target: Point3, f: f64, cx: f64, cy: f64, frame: Frame) -> CameraMatrix {
    let fwd = (target - eye).normalize();
    let world_up = if fwd.y.abs() > 0.99 { Vector3::new(1.0, 0.0, 0.0) } else { Vector3::new(0.0, 1.0, 0.0) };
    let right = world_up.cross(&fwd).normalize();
    let up = fwd.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), up.transpose(), fwd.transpose()]);
    let t = -r * eye.coords;
    let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    CameraMatrix::new(k * rt, frame).expect("finite pose")
}

fn validate(cfg: &SceneConfig) -> Result<(), SimulatorError> {
    let err = |msg: &str| Err(SimulatorError::InvalidConfig(msg.to_string()));
    if cfg.n_spheres == 0 {
        return err("n_spheres must be >= 1");
    }
    if cfg.n_frames < 2 {
        return err("n_frames must be >= 2");
    }
    if !(cfg.radius_range.0 > 0.0 && cfg.radius_range.1 >= cfg.radius_range.0) {
        return err("radius_range must be positive and ordered");
    }
    if cfg.min_separation < 1.0 {
        return err("min_separation must be >= 1 (spheres may not interpenetrate)");
    }
    if cfg.canopy_min.iter().zip(&cfg.canopy_max).any(|(lo, hi)| lo > hi) {
        return err("canopy_min must not exceed canopy_max");
    }
    if cfg.intrinsics.f_focal <= 0.0 || cfg.intrinsics.width <= 0.0 || cfg.intrinsics.height <= 0.0 {
        return err("intrinsics must be positive");
    }
    if cfg.occlusion.duration_range.0 == 0 || cfg.occlusion.duration_range.1 < cfg.occlusion.duration_range.0 {
        return err("blackout duration range must be ordered and positive");
    }
    match cfg.path {
        CameraPath::Sweep { rows, standoff, .. } => {
            if rows == 0 {
                return err("sweep rows must be >= 1");
            }
            if standoff <= 0.0 {
                return err("sweep standoff must be positive");
            }
        }
        CameraPath::Arc { radius, angle_span } => {
            if radius <= 0.0 || angle_span <= 0.0 {
                return err("arc radius and angle span must be positive");
            }
        }
    }
    Ok(())
}

fn place_spheres(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Sphere>, SimulatorError> {
    let mut spheres: Vec<Sphere> = Vec::with_capacity(cfg.n_spheres);
    let budget = cfg.n_spheres * PLACEMENT_ATTEMPTS_PER_SPHERE;
    let mut attempts = 0;
    while spheres.len() < cfg.n_spheres {
        attempts += 1;
        if attempts > budget {
            return Err(SimulatorError::InfeasiblePlacement { placed: spheres.len(), requested: cfg.n_spheres });
        }
        let ray = if cfg.radius_range.0 == cfg.radius_range.1 {
            cfg.radius_range.0
        } else {
            rng.random_range(cfg.radius_range.0..=cfg.radius_range.1)
        };
        let mut center = [0.0f64; 3];
        for (axis, c) in center.iter_mut().enumerate() {
            let (lo, hi) = (cfg.canopy_min[axis], cfg.canopy_max[axis]);
            *c = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        }
        let candidate = Sphere { center, ray };
        let ok = spheres.iter().all(|s| {
            (s.center_point() - candidate.center_point()).norm() >= cfg.min_separation * (s.ray + candidate.ray)
        });
        if ok {
            spheres.push(candidate);
        }
    }
    Ok(spheres)
}

fn canopy_centroid(cfg: &SceneConfig) -> Point3 {
    Point3::new(
        (cfg.canopy_min[0] + cfg.canopy_max[0]) / 2.0,
        (cfg.canopy_min[1] + cfg.canopy_max[1]) / 2.0,
        (cfg.canopy_min[2] + cfg.canopy_max[2]) / 2.0,
    )
}

fn build_path(cfg: &SceneConfig) -> BTreeMap<Frame, CameraMatrix> {
    let target = canopy_centroid(cfg);
    let k = &cfg.intrinsics;
    let mut cams = BTreeMap::new();
    match cfg.path {
        CameraPath::Sweep { rows, standoff, margin } => {
            let x_lo = cfg.canopy_min[0] - margin;
            let x_hi = cfg.canopy_max[0] + margin;
            let z = cfg.canopy_min[2] - standoff;
            let y_span = cfg.canopy_max[1] - cfg.canopy_min[1];
            let row_y = |r: usize| {
                if rows == 1 {
                    target.y
                } else {
                    // Bottom row first, inset a little from the canopy faces.
                    cfg.canopy_min[1] + y_span * (0.1 + 0.8 * r as f64 / (rows - 1) as f64)
                }
            };
            // Hand-held single-take path: a continuous serpentine polyline
            // (horizontal passes joined by vertical moves), walked at
            // constant speed.
            let mut corners: Vec<(f64, f64)> = Vec::with_capacity(2 * rows);
            for r in 0..rows {
                let y = row_y(r);
                if r % 2 == 0 {
                    corners.push((x_lo, y));
                    corners.push((x_hi, y));
                } else {
                    corners.push((x_hi, y));
                    corners.push((x_lo, y));
                }
            }
            let seg_lengths: Vec<f64> = corners
                .windows(2)
                .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
                .collect();
            let total: f64 = seg_lengths.iter().sum();
            for frame in 1..=cfg.n_frames {
                let t = (frame - 1) as f64 / (cfg.n_frames - 1) as f64;
                let (x, y) = if total <= 0.0 {
                    corners[0]
                } else {
                    let mut s = t * total;
                    let mut pos = *corners.last().expect("non-empty polyline");
                    for (w, len) in corners.windows(2).zip(&seg_lengths) {
                        if s <= *len || std::ptr::eq(len, seg_lengths.last().unwrap()) {
                            let f = if *len > 0.0 { (s / len).clamp(0.0, 1.0) } else { 0.0 };
                            pos = (w[0].0 + (w[1].0 - w[0].0) * f, w[0].1 + (w[1].1 - w[0].1) * f);
                            break;
                        }
                        s -= len;
                    }
                    pos
                };
                let eye = Point3::new(x, y, z);
                cams.insert(frame, look_at_camera(eye, target, k.f_focal, k.cx, k.cy, frame));
            }
        }
        CameraPath::Arc { radius, angle_span } => {
            for frame in 1..=cfg.n_frames {
                let t = (frame - 1) as f64 / (cfg.n_frames - 1) as f64;
                let theta = (t - 0.5) * angle_span;
                let eye = Point3::new(
                    target.x + radius * theta.sin(),
                    target.y,
                    target.z - radius * theta.cos(),
                );
                cams.insert(frame, look_at_camera(eye, target, k.f_focal, k.cx, k.cy, frame));
            }
        }
    }
    cams
}

fn draw_blackouts(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<(Frame, Frame)>> {
    let mut all = Vec::with_capacity(cfg.n_spheres);
    let lambda = cfg.occlusion.events_per_sphere;
    let (dur_lo, dur_hi) = cfg.occlusion.duration_range;
    for _ in 0..cfg.n_spheres {
        let mut count = lambda.floor() as usize;
        if rng.random::<f64>() < lambda.fract() {
            count += 1;
        }
        let mut events = Vec::with_capacity(count);
        for _ in 0..count {
            let start = rng.random_range(1..=cfg.n_frames);
            let dur = if dur_lo == dur_hi { dur_lo } else { rng.random_range(dur_lo..=dur_hi) };
            events.push((start, (start + dur - 1).min(cfg.n_frames)));
        }
        all.push(events);
    }
    all
}

/// Fraction of the target disk covered by the union of the near disks,
/// integrated by midpoint sampling over the target's bounding square.
pub fn occlusion_fraction(near_disks: &[(Pixel, f64)], target: (Pixel, f64)) -> f64 {
    if near_disks.is_empty() {
        return 0.0;
    }
    let (c, r) = target;
    let n = OCCLUSION_GRID;
    let step = 2.0 * r / n as f64;
    let mut inside = 0usize;
    let mut covered = 0usize;
    for iy in 0..n {
        let y = c.y - r + step * (iy as f64 + 0.5);
        for ix in 0..n {
            let x = c.x - r + step * (ix as f64 + 0.5);
            let dx = x - c.x;
            let dy = y - c.y;
            if dx * dx + dy * dy > r * r {
                continue;
            }
            inside += 1;
            let hit = near_disks.iter().any(|(nc, nr)| {
                let ddx = x - nc.x;
                let ddy = y - nc.y;
                ddx * ddx + ddy * ddy <= nr * nr
            });
            if hit {
                covered += 1;
            }
        }
    }
    if inside == 0 {
        return 0.0;
    }
    covered as f64 / inside as f64
}

/// Generate a full scene deterministically from config and seed.
///
/// A sphere's box is emitted at a frame iff it is not blacked out, more than
/// half of its projected disk is unoccluded by nearer spheres, and the box
/// lies fully inside the image.
pub fn generate_scene(cfg: &SceneConfig) -> Result<GroundTruthScene, SimulatorError> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spheres = place_spheres(cfg, &mut rng)?;
    let cams = build_path(cfg);
    let blackouts = draw_blackouts(cfg, &mut rng);
    let k = &cfg.intrinsics;

    let mut gt_boxes = Vec::new();
    for (&frame, cam) in &cams {
        let cam_c = camera_center(cam).expect("look-at cameras are well conditioned");
        // Projected disk (center, radius, distance) per sphere, if in front.
        let disks: Vec<Option<(Pixel, f64, f64)>> = spheres
            .iter()
            .map(|s| {
                let center = s.center_point();
                let d = (center - cam_c).norm();
                if crate::geometry::point_depth(cam, &center) <= 0.0 {
                    return None;
                }
                let px = project(cam, &center).ok()?;
                Some((px, k.f_focal * s.ray / d, d))
            })
            .collect();

        for (i, sphere) in spheres.iter().enumerate() {
            if blackouts[i].iter().any(|&(s, e)| frame >= s && frame <= e) {
                continue;
            }
            let Some((px, r_px, dist)) = disks[i] else {
                continue;
            };
            let Some(bbox) = sphere_image_box(
                &sphere.center_point(),
                sphere.ray,
                cam,
                k.f_focal,
                k.width,
                k.height,
            ) else {
                continue;
            };
            if !bbox.inside_image(k.width, k.height) {
                continue;
            }
            let near: Vec<(Pixel, f64)> = disks
                .iter()
                .enumerate()
                .filter_map(|(j, d)| {
                    if j == i {
                        return None;
                    }
                    let (pj, rj, dj) = (*d)?;
                    if dj >= dist {
                        return None;
                    }
                    // Only disks whose bounding circles intersect can occlude.
                    if (pj - px).norm() >= rj + r_px {
                        return None;
                    }
                    Some((pj, rj))
                })
                .collect();
            let visibility = 1.0 - occlusion_fraction(&near, (px, r_px));
            if visibility > 0.5 {
                gt_boxes.push(
                    LabeledBox::new(frame, (i + 1) as u32, bbox, visibility)
                        .expect("simulator produces valid labels"),
                );
            }
        }
    }

    Ok(GroundTruthScene { config: cfg.clone(), spheres, cams, gt_boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_sphere_cfg() -> SceneConfig {
        SceneConfig {
            n_spheres: 1,
            radius_range: (0.04, 0.04),
            canopy_min: [0.0, 0.0, 2.0],
            canopy_max: [0.0, 0.0, 2.0],
            path: CameraPath::Sweep { rows: 1, standoff: 2.0, margin: 0.2 },
            n_frames: 10,
            occlusion: BlackoutConfig { events_per_sphere: 0.0, duration_range: (1, 1) },
            seed: 3,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn single_on_axis_sphere_visible_everywhere() {
        let scene = generate_scene(&single_sphere_cfg()).unwrap();
        assert_eq!(scene.gt_boxes.len(), 10);
        for b in &scene.gt_boxes {
            assert_eq!(b.track_id, 1);
            assert_relative_eq!(b.visibility, 1.0);
        }
    }

    #[test]
    fn gt_boxes_equal_sphere_reprojection() {
        let mut cfg = SceneConfig { n_spheres: 12, n_frames: 20, ..SceneConfig::default() };
        cfg.seed = 5;
        let scene = generate_scene(&cfg).unwrap();
        assert!(!scene.gt_boxes.is_empty());
        let k = &cfg.intrinsics;
        for b in &scene.gt_boxes {
            let s = &scene.spheres[(b.track_id - 1) as usize];
            let re = sphere_image_box(&s.center_point(), s.ray, &scene.cams[&b.frame], k.f_focal, k.width, k.height)
                .expect("visible box must reproject");
            assert_eq!(re, b.bbox);
        }
    }

    #[test]
    fn nearer_sphere_fully_occludes_far_one() {
        // Two spheres stacked along the optical axis; the far one never
        // clears the 50% visibility bar.
        let cfg = SceneConfig {
            n_spheres: 2,
            radius_range: (0.04, 0.04),
            canopy_min: [0.0, 0.0, 1.6],
            canopy_max: [0.0, 0.0, 2.4],
            path: CameraPath::Sweep { rows: 1, standoff: 1.6, margin: 0.0 },
            n_frames: 5,
            occlusion: BlackoutConfig { events_per_sphere: 0.0, duration_range: (1, 1) },
            seed: 9,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let near_id = 1 + scene
            .spheres
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.center[2].partial_cmp(&b.1.center[2]).unwrap())
            .unwrap()
            .0 as u32;
        assert!(!scene.gt_boxes.is_empty());
        assert!(scene.gt_boxes.iter().all(|b| b.track_id == near_id));
    }

    #[test]
    fn sphere_leaving_fov_stops_emitting() {
        // One sphere somewhere along a wide canopy; with the camera orbiting
        // close by on an arc, the sphere exits the field of view for part of
        // the sweep. Emission must coincide exactly with the frames where the
        // box is fully inside the image.
        let cfg = SceneConfig {
            n_spheres: 1,
            radius_range: (0.04, 0.04),
            canopy_min: [-1.2, 0.3, 2.0],
            canopy_max: [1.2, 0.3, 2.0],
            path: CameraPath::Arc { radius: 0.9, angle_span: 2.8 },
            n_frames: 40,
            occlusion: BlackoutConfig { events_per_sphere: 0.0, duration_range: (1, 1) },
            seed: 2,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let frames: Vec<Frame> = scene.gt_boxes.iter().map(|b| b.frame).collect();
        assert!(!frames.is_empty(), "sphere should be visible somewhere in the sweep");
        assert!(frames.len() < 40, "sphere should leave the field of view");
        let k = &cfg.intrinsics;
        let s = &scene.spheres[0];
        for f in 1..=cfg.n_frames {
            let fully_inside = sphere_image_box(
                &s.center_point(),
                s.ray,
                &scene.cams[&f],
                k.f_focal,
                k.width,
                k.height,
            )
            .map(|b| b.inside_image(k.width, k.height))
            .unwrap_or(false);
            assert_eq!(fully_inside, frames.contains(&f), "frame {f}");
        }
    }

    #[test]
    fn occlusion_fraction_trivial_cases() {
        let target = (Pixel::new(10.0, 10.0), 5.0);
        assert_eq!(occlusion_fraction(&[], target), 0.0);
        assert_relative_eq!(occlusion_fraction(&[target], target), 1.0);
    }

    #[test]
    fn occlusion_matches_two_circle_lens_area() {
        // Equal radii, centers one radius apart: lens area over disk area is
        // (2 pi / 3 - sqrt(3) / 2) / pi.
        let r = 8.0;
        let target = (Pixel::new(0.0, 0.0), r);
        let near = vec![(Pixel::new(r, 0.0), r)];
        let expected = (2.0 * std::f64::consts::PI / 3.0 - 3.0f64.sqrt() / 2.0) / std::f64::consts::PI;
        let got = occlusion_fraction(&near, target);
        assert!((got - expected).abs() / expected <= 0.02, "got {got}, expected {expected}");
    }

    #[test]
    fn occlusion_matches_analytic_on_random_pairs() {
        fn lens_fraction(d: f64, r1: f64, r2: f64) -> f64 {
            // Intersection area of circles (r1 = target, r2 = occluder) over
            // the target's area.
            use std::f64::consts::PI;
            if d >= r1 + r2 {
                return 0.0;
            }
            if d <= (r1 - r2).abs() {
                let small = r1.min(r2);
                return small * small / (r1 * r1);
            }
            let t1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
            let t2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
            let tri = 0.5
                * ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)).max(0.0).sqrt();
            (r1 * r1 * t1 + r2 * r2 * t2 - tri) / (PI * r1 * r1)
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let r1 = rng.random_range(4.0..12.0);
            let r2 = rng.random_range(4.0..12.0);
            let d = rng.random_range(0.0..(r1 + r2) * 1.1);
            let target = (Pixel::new(50.0, 50.0), r1);
            let near = vec![(Pixel::new(50.0 + d, 50.0), r2)];
            let got = occlusion_fraction(&near, target);
            let expected = lens_fraction(d, r1, r2);
            assert!((got - expected).abs() <= 0.02, "d={d} r1={r1} r2={r2}: got {got} expected {expected}");
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let cfg = SceneConfig { n_spheres: 20, n_frames: 30, seed: 77, ..SceneConfig::default() };
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_placement_detected() {
        let cfg = SceneConfig {
            n_spheres: 10,
            radius_range: (0.5, 0.5),
            canopy_min: [0.0, 0.0, 2.0],
            canopy_max: [0.1, 0.1, 2.1],
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(&cfg).unwrap_err(),
            SimulatorError::InfeasiblePlacement { .. }
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SceneConfig { n_frames: 1, ..SceneConfig::default() };
        assert!(matches!(generate_scene(&cfg).unwrap_err(), SimulatorError::InvalidConfig(_)));
    }
}
