//! COLMAP text-model ingestion: `cameras.txt` intrinsics and `images.txt`
//! poses, composed into per-frame projective matrices `P = K [R | t]`.

use super::IoFormatError;
use crate::geometry::{CameraMatrix, Frame};
use crate::simulator::Intrinsics;
use nalgebra::{Matrix3, Matrix3x4, Rotation3, UnitQuaternion, Vector3};
use regex::Regex;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapIntrinsics {
    pub camera_id: u64,
    pub model: String,
    pub width: f64,
    pub height: f64,
    pub params: Vec<f64>,
}

impl ColmapIntrinsics {
    /// Calibration matrix for the supported models. SIMPLE_RADIAL falls back
    /// to the pinhole part of its parameters (distortion ignored).
    pub fn k_matrix(&self) -> Result<Matrix3<f64>, IoFormatError> {
        let k = |fx: f64, fy: f64, cx: f64, cy: f64| {
            Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
        };
        match self.model.as_str() {
            "SIMPLE_PINHOLE" | "SIMPLE_RADIAL" => Ok(k(self.params[0], self.params[0], self.params[1], self.params[2])),
            "PINHOLE" => Ok(k(self.params[0], self.params[1], self.params[2], self.params[3])),
            other => Err(IoFormatError::UnknownCameraModel(other.to_string())),
        }
    }

    pub fn focal(&self) -> f64 {
        self.params[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPose {
    pub image_id: u64,
    /// Unit quaternion (qw, qx, qy, qz) rotating world into camera axes.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub camera_id: u64,
    pub name: String,
}

/// Ingested model: per-frame cameras plus the shared-intrinsics summary the
/// tracker needs.
#[derive(Debug, Clone)]
pub struct ColmapModel {
    pub cams: BTreeMap<Frame, CameraMatrix>,
    pub focal: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub warnings: Vec<String>,
}

/// Rotation matrix of a unit quaternion (qw, qx, qy, qz).
pub fn quaternion_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim_start().starts_with('#'))
}

pub fn parse_cameras(text: &str, path_label: &str) -> Result<BTreeMap<u64, ColmapIntrinsics>, IoFormatError> {
    let mut cameras = BTreeMap::new();
    for (line_no, line) in data_lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| IoFormatError::Parse {
            path: path_label.to_string(),
            line: line_no,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(err("camera line needs CAMERA_ID MODEL WIDTH HEIGHT PARAMS..."));
        }
        let camera_id: u64 = fields[0].parse().map_err(|_| err("invalid camera id"))?;
        let model = fields[1].to_string();
        let width: f64 = fields[2].parse().map_err(|_| err("invalid width"))?;
        let height: f64 = fields[3].parse().map_err(|_| err("invalid height"))?;
        if width <= 0.0 || height <= 0.0 {
            return Err(err("image dimensions must be positive"));
        }
        let params: Vec<f64> = fields[4..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| err(&format!("invalid parameter '{s}'"))))
            .collect::<Result<_, _>>()?;
        let required = match model.as_str() {
            "SIMPLE_PINHOLE" => 3,
            "PINHOLE" => 4,
            "SIMPLE_RADIAL" => 4,
            other => return Err(IoFormatError::UnknownCameraModel(other.to_string())),
        };
        if params.len() < required {
            return Err(err(&format!("model {model} needs {required} parameters")));
        }
        if params[0] <= 0.0 {
            return Err(err("focal length must be positive"));
        }
        cameras.insert(camera_id, ColmapIntrinsics { camera_id, model, width, height, params });
    }
    Ok(cameras)
}

/// Parse `images.txt`. Each image occupies two lines; the second (2-D point
/// observations) is skipped and may be empty.
pub fn parse_images(text: &str, path_label: &str) -> Result<Vec<ColmapPose>, IoFormatError> {
    let mut poses = Vec::new();
    let mut expect_points_line = false;
    for (line_no, line) in data_lines(text) {
        if expect_points_line {
            expect_points_line = false;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| IoFormatError::Parse {
            path: path_label.to_string(),
            line: line_no,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(err("image line needs IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let image_id: u64 = fields[0].parse().map_err(|_| err("invalid image id"))?;
        let mut rotation = [0.0f64; 4];
        for (slot, s) in rotation.iter_mut().zip(&fields[1..5]) {
            *slot = s.parse().map_err(|_| err(&format!("invalid quaternion component '{s}'")))?;
        }
        let mut translation = [0.0f64; 3];
        for (slot, s) in translation.iter_mut().zip(&fields[5..8]) {
            *slot = s.parse().map_err(|_| err(&format!("invalid translation component '{s}'")))?;
        }
        let camera_id: u64 = fields[8].parse().map_err(|_| err("invalid camera id"))?;
        let name = fields[9].to_string();
        poses.push(ColmapPose { image_id, rotation, translation, camera_id, name });
        expect_points_line = true;
    }
    Ok(poses)
}

/// Default frame-index extraction: the trailing digit run of the file stem.
pub fn default_frame_pattern() -> Regex {
    Regex::new(r"(\d+)$").expect("static pattern")
}

fn frame_from_name(name: &str, pattern: &Regex) -> Result<Frame, IoFormatError> {
    let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    let caps = pattern.captures(stem).ok_or_else(|| IoFormatError::BadImageName(name.to_string()))?;
    let digits = caps.get(1).map(|m| m.as_str()).unwrap_or_else(|| caps.get(0).unwrap().as_str());
    digits.parse::<Frame>().map_err(|_| IoFormatError::BadImageName(name.to_string()))
}

pub fn read_colmap(cameras_path: &Path, images_path: &Path) -> Result<ColmapModel, IoFormatError> {
    read_colmap_with_pattern(cameras_path, images_path, &default_frame_pattern())
}

pub fn read_colmap_with_pattern(
    cameras_path: &Path,
    images_path: &Path,
    frame_pattern: &Regex,
) -> Result<ColmapModel, IoFormatError> {
    let cameras_text = std::fs::read_to_string(cameras_path)?;
    let images_text = std::fs::read_to_string(images_path)?;
    build_model(
        &parse_cameras(&cameras_text, &cameras_path.display().to_string())?,
        &parse_images(&images_text, &images_path.display().to_string())?,
        frame_pattern,
    )
}

pub fn build_model(
    cameras: &BTreeMap<u64, ColmapIntrinsics>,
    poses: &[ColmapPose],
    frame_pattern: &Regex,
) -> Result<ColmapModel, IoFormatError> {
    let mut warnings = Vec::new();
    for cam in cameras.values() {
        if cam.model == "SIMPLE_RADIAL" {
            warnings.push(format!(
                "camera {}: SIMPLE_RADIAL distortion coefficient ignored; using pinhole part only",
                cam.camera_id
            ));
        }
        if cam.model == "PINHOLE" && (cam.params[0] - cam.params[1]).abs() > 1e-9 * cam.params[0] {
            warnings.push(format!(
                "camera {}: fx and fy differ; the tracker's shared focal uses fx",
                cam.camera_id
            ));
        }
    }

    let mut cams: BTreeMap<Frame, CameraMatrix> = BTreeMap::new();
    let mut frame_names: BTreeMap<Frame, String> = BTreeMap::new();
    for pose in poses {
        let intr = cameras
            .get(&pose.camera_id)
            .ok_or(IoFormatError::MissingIntrinsics { image_id: pose.image_id, camera_id: pose.camera_id })?;
        let norm = pose.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(IoFormatError::UnnormalizedRotation(pose.name.clone()));
        }
        let q = [
            pose.rotation[0] / norm,
            pose.rotation[1] / norm,
            pose.rotation[2] / norm,
            pose.rotation[3] / norm,
        ];
        let r = quaternion_to_rotation(q);
        let t = Vector3::new(pose.translation[0], pose.translation[1], pose.translation[2]);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.set_column(3, &t);
        let frame = frame_from_name(&pose.name, frame_pattern)?;
        if let Some(existing) = frame_names.get(&frame) {
            return Err(IoFormatError::DuplicateFrame(existing.clone(), pose.name.clone()));
        }
        let p = intr.k_matrix()? * rt;
        let cam = CameraMatrix::new(p, frame).map_err(|e| IoFormatError::Parse {
            path: pose.name.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        frame_names.insert(frame, pose.name.clone());
        cams.insert(frame, cam);
    }

    let first = cameras.values().next();
    let (focal, image_width, image_height) = match first {
        Some(c) => (c.focal(), c.width, c.height),
        None => (0.0, 0.0, 0.0),
    };
    Ok(ColmapModel { cams, focal, image_width, image_height, warnings })
}

/// Write a camera map as COLMAP text files, one shared pinhole camera.
/// `P = K [R | t]` is decomposed back with the known intrinsics.
pub fn write_colmap_text(
    cameras_path: &Path,
    images_path: &Path,
    intrinsics: &Intrinsics,
    cams: &BTreeMap<Frame, CameraMatrix>,
) -> Result<(), IoFormatError> {
    let mut cameras_out = String::new();
    cameras_out.push_str("# Camera list with one line of data per camera:\n");
    cameras_out.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    cameras_out.push_str(&format!(
        "1 SIMPLE_PINHOLE {} {} {} {} {}\n",
        intrinsics.width, intrinsics.height, intrinsics.f_focal, intrinsics.cx, intrinsics.cy
    ));
    std::fs::write(cameras_path, cameras_out)?;

    let k = Matrix3::new(
        intrinsics.f_focal,
        0.0,
        intrinsics.cx,
        0.0,
        intrinsics.f_focal,
        intrinsics.cy,
        0.0,
        0.0,
        1.0,
    );
    let k_inv = k.try_inverse().expect("calibration matrix is invertible");

    let mut images_out = String::new();
    images_out.push_str("# Image list with two lines of data per image:\n");
    images_out.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    images_out.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for (frame, cam) in cams {
        let rt = k_inv * cam.matrix();
        let r = rt.fixed_view::<3, 3>(0, 0).into_owned();
        let t = rt.column(3);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        images_out.push_str(&format!(
            "{} {} {} {} {} {} {} {} 1 frame{:06}.png\n\n",
            frame,
            fmt_g6_full(q.w),
            fmt_g6_full(q.i),
            fmt_g6_full(q.j),
            fmt_g6_full(q.k),
            fmt_g6_full(t[0]),
            fmt_g6_full(t[1]),
            fmt_g6_full(t[2]),
            frame
        ));
    }
    std::fs::write(images_path, images_out)?;
    Ok(())
}

/// Full-precision float formatting for pose files (poses feed geometry, so
/// 6 significant digits would visibly bias reprojection).
fn fmt_g6_full(x: f64) -> String {
    let mut s = format!("{x:.17}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.push('0');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{camera_center, Point3};
    use approx::assert_relative_eq;

    #[test]
    fn identity_pose_simple_pinhole_gives_canonical_camera() {
        let cameras = parse_cameras("1 SIMPLE_PINHOLE 100 100 1 0 0\n", "cams").unwrap();
        let poses = vec![ColmapPose {
            image_id: 1,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0, 0.0, 0.0],
            camera_id: 1,
            name: "frame000001.png".to_string(),
        }];
        let model = build_model(&cameras, &poses, &default_frame_pattern()).unwrap();
        let cam = &model.cams[&1];
        let expected = CameraMatrix::canonical(1);
        assert_relative_eq!(cam.matrix(), expected.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_quaternion_rotation() {
        let h = 0.5f64.sqrt();
        let r = quaternion_to_rotation([h, 0.0, 0.0, h]);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn unknown_model_rejected() {
        let err = parse_cameras("1 OPENCV 100 100 1 1 0 0 0 0 0 0\n", "cams").unwrap_err();
        assert!(matches!(err, IoFormatError::UnknownCameraModel(m) if m == "OPENCV"));
    }

    #[test]
    fn off_unit_quaternion_rejected() {
        let cameras = parse_cameras("1 SIMPLE_PINHOLE 100 100 1 0 0\n", "cams").unwrap();
        let poses = vec![ColmapPose {
            image_id: 1,
            rotation: [1.1, 0.0, 0.0, 0.0],
            translation: [0.0, 0.0, 0.0],
            camera_id: 1,
            name: "frame1.png".to_string(),
        }];
        let err = build_model(&cameras, &poses, &default_frame_pattern()).unwrap_err();
        assert!(matches!(err, IoFormatError::UnnormalizedRotation(_)));
    }

    #[test]
    fn missing_intrinsics_detected() {
        let cameras = parse_cameras("1 SIMPLE_PINHOLE 100 100 1 0 0\n", "cams").unwrap();
        let poses = vec![ColmapPose {
            image_id: 4,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0, 0.0, 0.0],
            camera_id: 2,
            name: "frame1.png".to_string(),
        }];
        let err = build_model(&cameras, &poses, &default_frame_pattern()).unwrap_err();
        assert!(matches!(err, IoFormatError::MissingIntrinsics { image_id: 4, camera_id: 2 }));
    }

    #[test]
    fn simple_radial_warns_about_distortion() {
        let cameras = parse_cameras("1 SIMPLE_RADIAL 100 100 50 50 50 0.1\n", "cams").unwrap();
        let model = build_model(&cameras, &[], &default_frame_pattern()).unwrap();
        assert_eq!(model.warnings.len(), 1);
        assert!(model.warnings[0].contains("distortion"));
    }

    #[test]
    fn camera_center_matches_colmap_formula() {
        // COLMAP defines the projection center as -R^T t.
        let q = {
            let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
            let angle = 0.7f64;
            let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
            [c, axis.x * s, axis.y * s, axis.z * s]
        };
        let t = [0.4, -0.2, 1.5];
        let cameras = parse_cameras("1 PINHOLE 1080 1920 1000 1000 540 960\n", "cams").unwrap();
        let poses = vec![ColmapPose {
            image_id: 1,
            rotation: q,
            translation: t,
            camera_id: 1,
            name: "img7.png".to_string(),
        }];
        let model = build_model(&cameras, &poses, &default_frame_pattern()).unwrap();
        let c = camera_center(&model.cams[&7]).unwrap();
        let r = quaternion_to_rotation(q);
        let expected = Point3::from(-r.transpose() * Vector3::new(t[0], t[1], t[2]));
        assert!((c - expected).norm() <= 1e-9);
    }

    #[test]
    fn images_with_point_lines_parse() {
        let text = "# comment\n1 1 0 0 0 0 0 0 1 frame000010.png\n10.5 20.5 1 30.5 40.5 2\n2 1 0 0 0 0 0 1 1 frame000011.png\n\n";
        let poses = parse_images(text, "images").unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[1].name, "frame000011.png");
    }

    #[test]
    fn frame_pattern_extracts_trailing_digits() {
        let pat = default_frame_pattern();
        assert_eq!(frame_from_name("frame000123.png", &pat).unwrap(), 123);
        assert_eq!(frame_from_name("V07_42.jpg", &pat).unwrap(), 42);
        assert!(frame_from_name("no_digits.png", &pat).is_err());
    }

    #[test]
    fn write_then_read_round_trips_cameras() {
        use crate::simulator::{generate_scene, SceneConfig};
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig { n_spheres: 3, n_frames: 12, seed: 8, ..SceneConfig::default() };
        let scene = generate_scene(&cfg).unwrap();
        let cam_path = dir.path().join("cameras.txt");
        let img_path = dir.path().join("images.txt");
        write_colmap_text(&cam_path, &img_path, &cfg.intrinsics, &scene.cams).unwrap();
        let model = read_colmap(&cam_path, &img_path).unwrap();
        assert_eq!(model.cams.len(), 12);
        assert_relative_eq!(model.focal, cfg.intrinsics.f_focal);
        for (frame, cam) in &scene.cams {
            let read_cam = &model.cams[frame];
            let a = camera_center(cam).unwrap();
            let b = camera_center(read_cam).unwrap();
            assert!((a - b).norm() <= 1e-9, "frame {frame}");
            // Same projective action up to scale.
            let pa = cam.matrix() / cam.matrix().norm();
            let pb = read_cam.matrix() / read_cam.matrix().norm();
            assert_relative_eq!(pa, pb, epsilon = 1e-9);
        }
    }
}
