//! Projective camera math shared by sphere estimation, tracking, the scene
//! simulator and file ingestion.
//!
//! All types are immutable values and every operation is a pure function, so
//! everything here is safe to call from any number of threads.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector3, Vector4};
use thiserror::Error;

/// Frame index type. MOT-style sequences are 1-based.
pub type Frame = usize;
/// A point in the (arbitrary-scale) scene space.
pub type Point3 = nalgebra::Point3<f64>;
/// An image location in pixels.
pub type Pixel = nalgebra::Point2<f64>;

/// Depth magnitude below which a projection is considered degenerate.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-12;
/// Condition estimate above which the left 3x3 camera block is treated as singular.
pub const MAX_CAMERA_CONDITION: f64 = 1e12;
/// Relative singular-value bound that flags a rank-deficient DLT system.
const DLT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("camera matrix has non-finite entries")]
    NonFiniteCamera,
    #[error("bounding box must have positive, finite dimensions")]
    InvalidBox,
    #[error("point lies on the camera principal plane (depth {0:.3e})")]
    DegenerateProjection(f64),
    #[error("left 3x3 camera block is singular (condition above {MAX_CAMERA_CONDITION:.0e})")]
    SingularCamera,
    #[error("triangulation needs at least 2 observations, got {0}")]
    InsufficientViews(usize),
}

/// A 3x4 projective camera matrix `P` tied to one frame of a sequence.
///
/// `P` maps homogeneous scene points to homogeneous pixels; the left 3x3
/// block must be invertible for the camera center to exist.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMatrix {
    p: Matrix3x4<f64>,
    frame: Frame,
}

impl CameraMatrix {
    pub fn new(p: Matrix3x4<f64>, frame: Frame) -> Result<Self, GeometryError> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteCamera);
        }
        Ok(Self { p, frame })
    }

    /// Canonical camera `[I | 0]` for the given frame.
    pub fn canonical(frame: Frame) -> Self {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        Self { p, frame }
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.p
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    /// The left 3x3 block `M` of `P = [M | p4]`.
    pub fn left_block(&self) -> Matrix3<f64> {
        self.p.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Fourth column `p4` of the camera matrix.
    pub fn translation_column(&self) -> Vector3<f64> {
        self.p.column(3).into_owned()
    }
}

/// Axis-aligned pixel rectangle, the unit of detection and annotation.
/// `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let finite = x.is_finite() && y.is_finite() && width.is_finite() && height.is_finite();
        if !finite || width <= 0.0 || height <= 0.0 {
            return Err(GeometryError::InvalidBox);
        }
        Ok(Self { x, y, width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Geometric center of the box.
    pub fn centroid(&self) -> Pixel {
        Pixel::new(self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    /// Jaccard index over the intersection and union areas. Boxes that only
    /// share an edge have intersection area zero, hence IoU zero.
    pub fn iou(&self, other: &Self) -> f64 {
        let ix = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let iy = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }

    /// True when the box lies entirely inside an image of the given size.
    pub fn inside_image(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x + self.width <= width && self.y + self.height <= height
    }

    /// True when any part of the box overlaps an image of the given size.
    pub fn intersects_image(&self, width: f64, height: f64) -> bool {
        self.x < width && self.y < height && self.x + self.width > 0.0 && self.y + self.height > 0.0
    }
}

/// Project a scene point through the camera and dehomogenize.
pub fn project(cam: &CameraMatrix, point: &Point3) -> Result<Pixel, GeometryError> {
    let h = cam.p * Vector4::new(point.x, point.y, point.z, 1.0);
    if h.z.abs() < MIN_PROJECTION_DEPTH {
        return Err(GeometryError::DegenerateProjection(h.z));
    }
    Ok(Pixel::new(h.x / h.z, h.y / h.z))
}

/// Signed depth of a point in front of (+) or behind (-) the camera,
/// invariant to the arbitrary scale of `P`.
pub fn point_depth(cam: &CameraMatrix, point: &Point3) -> f64 {
    let m = cam.left_block();
    let h = cam.p * Vector4::new(point.x, point.y, point.z, 1.0);
    let row3_norm = m.row(2).norm();
    if row3_norm == 0.0 {
        return 0.0;
    }
    m.determinant().signum() * h.z / row3_norm
}

/// Camera projection center `C = -M^-1 p4`, which satisfies `P (C; 1) = 0`.
pub fn camera_center(cam: &CameraMatrix) -> Result<Point3, GeometryError> {
    let m = cam.left_block();
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > MAX_CAMERA_CONDITION {
        return Err(GeometryError::SingularCamera);
    }
    let c = m
        .lu()
        .solve(&(-cam.translation_column()))
        .ok_or(GeometryError::SingularCamera)?;
    Ok(Point3::from(c))
}

/// Least-squares triangulation of a point from two or more views via the
/// smallest singular vector of the stacked DLT system.
///
/// Returns `None` when the system is rank-deficient (e.g. all observations
/// come from the same camera center) or the solution lies at infinity.
pub fn dlt_triangulate(observations: &[(Pixel, &CameraMatrix)]) -> Result<Option<Point3>, GeometryError> {
    let n = observations.len();
    if n < 2 {
        return Err(GeometryError::InsufficientViews(n));
    }
    let mut a = DMatrix::<f64>::zeros(2 * n, 4);
    for (k, (px, cam)) in observations.iter().enumerate() {
        let p = cam.matrix();
        for (r, coord, row_idx) in [(2 * k, px.x, 0usize), (2 * k + 1, px.y, 1usize)] {
            // Row `coord * p3 - p_row`, scaled to unit norm for conditioning.
            let mut row = [0.0f64; 4];
            let mut norm_sq = 0.0;
            for c in 0..4 {
                let v = coord * p[(2, c)] - p[(row_idx, c)];
                row[c] = v;
                norm_sq += v * v;
            }
            let norm = norm_sq.sqrt();
            if norm > 0.0 {
                for c in 0..4 {
                    a[(r, c)] = row[c] / norm;
                }
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let s0 = svd.singular_values[order[0]];
    let s2 = svd.singular_values[order[2]];
    if s0 <= 0.0 || s2 <= DLT_RANK_TOL * s0 {
        return Ok(None);
    }
    let sol = v_t.row(order[3]);
    let (x, y, z, w) = (sol[0], sol[1], sol[2], sol[3]);
    let spatial = (x * x + y * y + z * z).sqrt();
    if w.abs() <= 1e-12 * spatial.max(1.0) {
        return Ok(None);
    }
    Ok(Some(Point3::new(x / w, y / w, z / w)))
}

/// Euclidean distance between the projected point and a box centroid.
pub fn reprojection_error(cam: &CameraMatrix, point: &Point3, centroid: &Pixel) -> Result<f64, GeometryError> {
    let proj = project(cam, point)?;
    Ok((proj - centroid).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::look_at_camera;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3x4;
    use proptest::prelude::*;

    fn intrinsics(f: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0)
    }

    #[test]
    fn project_canonical_camera() {
        let cam = CameraMatrix::canonical(1);
        let px = project(&cam, &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Pixel::new(0.0, 0.0));
    }

    #[test]
    fn project_with_intrinsics() {
        // K [I | 0] with focal 100 and principal point (50, 50): X = (1, 0, 2)
        // lands at (100*1/2 + 50, 50) = (100, 50).
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&intrinsics(100.0, 50.0, 50.0));
        let cam = CameraMatrix::new(p, 1).unwrap();
        let px = project(&cam, &Point3::new(1.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(px.x, 100.0);
        assert_relative_eq!(px.y, 50.0);
    }

    #[test]
    fn project_zero_depth_is_degenerate() {
        let cam = CameraMatrix::canonical(1);
        let err = project(&cam, &Point3::new(0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateProjection(_)));
    }

    #[test]
    fn camera_center_identity() {
        let cam = CameraMatrix::canonical(1);
        assert_eq!(camera_center(&cam).unwrap(), Point3::origin());
    }

    #[test]
    fn camera_center_identity_with_translation() {
        // P = [I | -t] has center t.
        let t = Vector3::new(0.4, -1.3, 2.5);
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        p.set_column(3, &(-t));
        let cam = CameraMatrix::new(p, 1).unwrap();
        let c = camera_center(&cam).unwrap();
        assert_relative_eq!(c.coords, t, epsilon = 1e-12);
    }

    #[test]
    fn camera_center_nulls_projection() {
        let cam = look_at_camera(Point3::new(1.5, -0.7, 0.3), Point3::new(0.0, 0.0, 2.0), 800.0, 540.0, 960.0, 1);
        let c = camera_center(&cam).unwrap();
        let residual = cam.matrix() * Vector4::new(c.x, c.y, c.z, 1.0);
        // Residual measured against the scale-normalized camera.
        assert!(residual.norm() / cam.matrix().norm() <= 1e-9);
    }

    #[test]
    fn singular_camera_rejected() {
        let p = Matrix3x4::zeros();
        let cam = CameraMatrix::new(p, 1).unwrap();
        assert_eq!(camera_center(&cam).unwrap_err(), GeometryError::SingularCamera);
    }

    #[test]
    fn dlt_recovers_point_from_three_views() {
        let target = Point3::new(0.3, -0.2, 2.0);
        let cams: Vec<CameraMatrix> = [
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 0.5, -0.2),
            Point3::new(1.1, -0.4, 0.1),
        ]
        .iter()
        .enumerate()
        .map(|(i, eye)| look_at_camera(*eye, Point3::new(0.0, 0.0, 2.0), 1000.0, 540.0, 960.0, i + 1))
        .collect();
        let obs: Vec<(Pixel, &CameraMatrix)> = cams
            .iter()
            .map(|cam| (project(cam, &target).unwrap(), cam))
            .collect();
        let rec = dlt_triangulate(&obs).unwrap().expect("non-degenerate");
        assert!((rec - target).norm() / target.coords.norm() <= 1e-6);
    }

    #[test]
    fn dlt_same_camera_twice_is_degenerate() {
        let cam = look_at_camera(Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), 1000.0, 540.0, 960.0, 1);
        let px = project(&cam, &Point3::new(0.1, 0.1, 2.0)).unwrap();
        let obs = vec![(px, &cam), (px, &cam)];
        assert_eq!(dlt_triangulate(&obs).unwrap(), None);
    }

    #[test]
    fn dlt_single_view_is_insufficient() {
        let cam = CameraMatrix::canonical(1);
        let obs = vec![(Pixel::new(0.0, 0.0), &cam)];
        assert_eq!(dlt_triangulate(&obs).unwrap_err(), GeometryError::InsufficientViews(1));
    }

    #[test]
    fn reprojection_error_cases() {
        let cam = CameraMatrix::canonical(1);
        let x = Point3::new(0.5, -0.25, 1.0);
        let exact = project(&cam, &x).unwrap();
        assert_eq!(reprojection_error(&cam, &x, &exact).unwrap(), 0.0);

        // Projection (10, 10) against centroid (13, 14): a 3-4-5 triangle.
        let x2 = Point3::new(10.0, 10.0, 1.0);
        assert_relative_eq!(reprojection_error(&cam, &x2, &Pixel::new(13.0, 14.0)).unwrap(), 5.0);

        let err = reprojection_error(&cam, &Point3::new(0.0, 0.0, 0.0), &exact).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateProjection(_)));
    }

    #[test]
    fn centroid_cases() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(b.centroid(), Pixel::new(5.0, 5.0));
        let b = BoundingBox::new(2.0, 4.0, 6.0, 8.0).unwrap();
        assert_eq!(b.centroid(), Pixel::new(5.0, 8.0));
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(b.centroid(), Pixel::new(0.5, 0.5));
    }

    #[test]
    fn iou_cases() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(a.iou(&a), 1.0);
        let b = BoundingBox::new(20.0, 20.0, 5.0, 5.0).unwrap();
        assert_eq!(a.iou(&b), 0.0);
        // Intersection 1, union 7.
        let c = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let d = BoundingBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
        assert_relative_eq!(c.iou(&d), 1.0 / 7.0);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap();
        let b = BoundingBox::new(5.0, 0.0, 5.0, 5.0).unwrap();
        assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, -5.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, bw in 0.1..40.0f64, bh in 0.1..40.0f64,
        ) {
            let a = BoundingBox::new(ax, ay, aw, ah).unwrap();
            let b = BoundingBox::new(bx, by, bw, bh).unwrap();
            let ab = a.iou(&b);
            prop_assert_eq!(ab, b.iou(&a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn centroid_lies_inside_box(
            x in -50.0..50.0f64, y in -50.0..50.0f64, w in 0.1..40.0f64, h in 0.1..40.0f64,
        ) {
            let b = BoundingBox::new(x, y, w, h).unwrap();
            let c = b.centroid();
            prop_assert!(c.x > b.x && c.x < b.x + b.width);
            prop_assert!(c.y > b.y && c.y < b.y + b.height);
        }
    }
}
