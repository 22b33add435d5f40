//! Pinhole cameras with two-term radial distortion and two-view triangulation.
//!
//! World frame is right-handed, +Y up, meters. Camera frames look along +Z
//! with +X right and +Y down in the image, so pixel origin is top-left.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;
use crate::skeleton::JOINT_COUNT;

/// Default timestamp tolerance when pairing left/right frames, seconds.
pub const DEFAULT_SYNC_TOLERANCE: f64 = 0.002;

const MIN_DEPTH: f64 = 1e-9;
const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_TOL: f64 = 1e-12;
const PARALLEL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {0} in camera frame")]
    NonPositiveDepth(f64),
    #[error("distortion inversion did not converge for pixel ({0}, {1})")]
    NoConvergence(f64, f64),
    #[error("back-projected rays are parallel")]
    DegenerateRays,
    #[error("triangulated point lies behind a camera")]
    BehindCamera,
    #[error("frame timestamps {left} and {right} differ by more than {tolerance} s")]
    FrameSyncError { left: f64, right: f64, tolerance: f64 },
    #[error("both frames come from camera {0}")]
    SameCamera(u32),
    #[error("no correspondences supplied")]
    Empty,
    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: u32, reason: String },
    #[error("invalid rig: {0}")]
    InvalidRig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    /// World to camera translation, meters.
    pub translation: Vec3,
}

impl CameraModel {
    /// Validates focal lengths and the rotation matrix.
    pub fn new(
        id: u32,
        (fx, fy): (f64, f64),
        (cx, cy): (f64, f64),
        (k1, k2): (f64, f64),
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self, GeometryError> {
        let cam = Self { id, fx, fy, cx, cy, k1, k2, rotation, translation };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason: &str| GeometryError::InvalidCamera { id: self.id, reason: reason.into() };
        let finite = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(bad("non-finite parameter"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(bad("focal lengths must be positive"));
        }
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if orth > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(bad("rotation is not a proper orthonormal matrix"));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Nominal image size, taken as twice the principal point.
    pub fn image_size(&self) -> (f64, f64) {
        (2.0 * self.cx, 2.0 * self.cy)
    }

    fn distortion_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Projects a world point to pixel coordinates, returning `(pixel, depth)`.
    pub fn project(&self, p: &Vec3) -> Result<([f64; 2], f64), GeometryError> {
        let pc = self.to_camera(p);
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth(pc.z));
        }
        let x = pc.x / pc.z;
        let y = pc.y / pc.z;
        let f = self.distortion_factor(x * x + y * y);
        Ok(([self.fx * x * f + self.cx, self.fy * y * f + self.cy], pc.z))
    }

    /// Inverts pixel coordinates to the normalized image plane by fixed-point
    /// iteration on the distortion polynomial.
    pub fn undistort_normalize(&self, pixel: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let xd = (pixel[0] - self.cx) / self.fx;
        let yd = (pixel[1] - self.cy) / self.fy;
        let (mut x, mut y) = (xd, yd);
        if self.k1 == 0.0 && self.k2 == 0.0 {
            return Ok([x, y]);
        }
        for _ in 0..UNDISTORT_MAX_ITERS {
            let f = self.distortion_factor(x * x + y * y);
            if !(f.is_finite() && f > 0.0) {
                break;
            }
            let (nx, ny) = (xd / f, yd / f);
            let step = (nx - x).abs().max((ny - y).abs());
            x = nx;
            y = ny;
            if step < UNDISTORT_TOL {
                return Ok([x, y]);
            }
        }
        Err(GeometryError::NoConvergence(pixel[0], pixel[1]))
    }

    /// Unit-less world-frame ray direction through a pixel.
    pub fn ray_direction(&self, pixel: [f64; 2]) -> Result<Vec3, GeometryError> {
        let [x, y] = self.undistort_normalize(pixel)?;
        Ok(self.rotation.transpose() * Vec3::new(x, y, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
}

impl StereoRig {
    pub fn new(left: CameraModel, right: CameraModel) -> Result<Self, GeometryError> {
        left.validate()?;
        right.validate()?;
        if left.id == right.id {
            return Err(GeometryError::InvalidRig(format!("duplicate camera id {}", left.id)));
        }
        if (left.center() - right.center()).norm() <= 0.0 {
            return Err(GeometryError::InvalidRig("camera centers coincide".into()));
        }
        Ok(Self { left, right })
    }

    pub fn baseline(&self) -> f64 {
        (self.left.center() - self.right.center()).norm()
    }

    pub fn camera(&self, id: u32) -> Option<&CameraModel> {
        [&self.left, &self.right].into_iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub conf: f64,
}

/// One camera's observations of the 32 landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame2D {
    pub t: f64,
    pub cam: u32,
    pub points: [Option<Keypoint2D>; JOINT_COUNT],
}

impl KeypointFrame2D {
    pub fn empty(t: f64, cam: u32) -> Self {
        Self { t, cam, points: [None; JOINT_COUNT] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawJoint {
    pub position: Vec3,
    pub conf: f64,
    /// RMS reprojection residual, pixels.
    pub reproj_err: f64,
}

/// Triangulated joints before any skeletal constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPose3D {
    pub t: f64,
    pub joints: [Option<RawJoint>; JOINT_COUNT],
}

impl RawPose3D {
    pub fn empty(t: f64) -> Self {
        Self { t, joints: [None; JOINT_COUNT] }
    }

    pub fn position(&self, joint: usize) -> Option<Vec3> {
        self.joints[joint].map(|j| j.position)
    }

    pub fn present_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }
}

/// Midpoint of the common perpendicular of the two back-projected rays.
///
/// Returns the world point and the RMS of the two per-view reprojection
/// residuals in pixels.
pub fn triangulate_point(rig: &StereoRig, pixel_l: [f64; 2], pixel_r: [f64; 2]) -> Result<(Vec3, f64), GeometryError> {
    let (cl, cr) = (rig.left.center(), rig.right.center());
    let dl = rig.left.ray_direction(pixel_l)?;
    let dr = rig.right.ray_direction(pixel_r)?;

    let w0 = cl - cr;
    let a = dl.dot(&dl);
    let b = dl.dot(&dr);
    let c = dr.dot(&dr);
    let d = dl.dot(&w0);
    let e = dr.dot(&w0);
    let denom = a * c - b * b;
    if denom <= PARALLEL_TOL * a * c {
        return Err(GeometryError::DegenerateRays);
    }
    let s = (b * e - c * d) / denom;
    let u = (a * e - b * d) / denom;
    let p = ((cl + dl * s) + (cr + dr * u)) * 0.5;

    let (proj_l, proj_r) = match (rig.left.project(&p), rig.right.project(&p)) {
        (Ok((pl, _)), Ok((pr, _))) => (pl, pr),
        _ => return Err(GeometryError::BehindCamera),
    };
    let sq = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let err = ((sq(proj_l, pixel_l) + sq(proj_r, pixel_r)) / 2.0).sqrt();
    Ok((p, err))
}

/// Triangulates every joint seen in both views. Joints seen in fewer than two
/// views, or whose rays are degenerate, are left missing.
pub fn triangulate_frame(
    rig: &StereoRig,
    left: &KeypointFrame2D,
    right: &KeypointFrame2D,
    sync_tolerance: f64,
) -> Result<RawPose3D, GeometryError> {
    if left.cam == right.cam {
        return Err(GeometryError::SameCamera(left.cam));
    }
    if (left.t - right.t).abs() > sync_tolerance {
        return Err(GeometryError::FrameSyncError { left: left.t, right: right.t, tolerance: sync_tolerance });
    }
    let mut out = RawPose3D::empty(left.t);
    for (slot, (l, r)) in out.joints.iter_mut().zip(left.points.iter().zip(&right.points)) {
        let (Some(l), Some(r)) = (l, r) else { continue };
        if let Ok((position, reproj_err)) = triangulate_point(rig, [l.u, l.v], [r.u, r.v]) {
            *slot = Some(RawJoint { position, conf: l.conf.min(r.conf), reproj_err });
        }
    }
    Ok(out)
}

/// A known world point with its observed pixels in both views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vec3,
    pub pixel_l: [f64; 2],
    pub pixel_r: [f64; 2],
}

/// RMS reprojection error over both views of every correspondence, pixels.
pub fn verify_rig(rig: &StereoRig, correspondences: &[Correspondence]) -> Result<f64, GeometryError> {
    if correspondences.is_empty() {
        return Err(GeometryError::Empty);
    }
    let mut sum = 0.0;
    for c in correspondences {
        let (pl, _) = rig.left.project(&c.point)?;
        let (pr, _) = rig.right.project(&c.point)?;
        sum += (pl[0] - c.pixel_l[0]).powi(2) + (pl[1] - c.pixel_l[1]).powi(2);
        sum += (pr[0] - c.pixel_r[0]).powi(2) + (pr[1] - c.pixel_r[1]).powi(2);
    }
    Ok((sum / (2 * correspondences.len()) as f64).sqrt())
}

/// Camera entry of the calibration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub cameras: Vec<CameraRecord>,
}

impl From<&CameraModel> for CameraRecord {
    fn from(c: &CameraModel) -> Self {
        let mut r = [0.0; 9];
        for (i, v) in r.iter_mut().enumerate() {
            *v = c.rotation[(i / 3, i % 3)];
        }
        Self {
            id: c.id,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            k1: c.k1,
            k2: c.k2,
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl TryFrom<&CameraRecord> for CameraModel {
    type Error = GeometryError;

    fn try_from(r: &CameraRecord) -> Result<Self, Self::Error> {
        CameraModel::new(
            r.id,
            (r.fx, r.fy),
            (r.cx, r.cy),
            (r.k1, r.k2),
            Matrix3::from_row_slice(&r.r),
            Vec3::from_column_slice(&r.t),
        )
    }
}

impl CalibrationFile {
    /// The first listed camera is the left view.
    pub fn to_rig(&self) -> Result<StereoRig, GeometryError> {
        if self.cameras.len() != 2 {
            return Err(GeometryError::InvalidRig(format!("expected exactly 2 cameras, found {}", self.cameras.len())));
        }
        StereoRig::new((&self.cameras[0]).try_into()?, (&self.cameras[1]).try_into()?)
    }

    pub fn from_rig(rig: &StereoRig) -> Self {
        Self { cameras: vec![(&rig.left).into(), (&rig.right).into()] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(id: u32, k1: f64, center_x: f64) -> CameraModel {
        CameraModel::new(
            id,
            (1000.0, 1000.0),
            (960.0, 540.0),
            (k1, 0.0),
            Matrix3::identity(),
            Vec3::new(-center_x, 0.0, 0.0),
        )
        .unwrap()
    }

    fn desk_rig() -> StereoRig {
        StereoRig::new(axis_camera(0, 0.0, 0.0), axis_camera(1, 0.0, 0.5)).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let (px, depth) = axis_camera(0, 0.0, 0.0).project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, [960.0, 540.0]);
        assert_eq!(depth, 1.0);
    }

    #[test]
    fn radial_distortion_forward() {
        let (px, _) = axis_camera(0, -0.1, 0.0).project(&Vec3::new(0.2, 0.0, 1.0)).unwrap();
        assert!((px[0] - 1159.2).abs() < 1e-9);
        assert_eq!(px[1], 540.0);
    }

    #[test]
    fn point_behind_camera_rejected() {
        let cam = axis_camera(0, 0.0, 0.0);
        assert!(matches!(cam.project(&Vec3::new(0.0, 0.0, -1.0)), Err(GeometryError::NonPositiveDepth(_))));
        assert!(matches!(cam.project(&Vec3::new(1.0, 0.0, 0.0)), Err(GeometryError::NonPositiveDepth(_))));
    }

    #[test]
    fn undistort_examples() {
        let cam = axis_camera(0, 0.0, 0.0);
        assert_eq!(cam.undistort_normalize([960.0, 540.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(cam.undistort_normalize([1210.0, 540.0]).unwrap(), [0.25, 0.0]);
        let cam = axis_camera(0, -0.1, 0.0);
        let [x, y] = cam.undistort_normalize([1159.2, 540.0]).unwrap();
        assert!((x - 0.2).abs() < 1e-9 && y.abs() < 1e-12);
    }

    #[test]
    fn undistort_reports_divergence() {
        // Strong barrel distortion folds the image far from the center.
        let cam = axis_camera(0, -0.9, 0.0);
        assert!(matches!(cam.undistort_normalize([960.0 + 1500.0, 540.0]), Err(GeometryError::NoConvergence(..))));
    }

    #[test]
    fn disparity_examples() {
        let rig = desk_rig();
        let (p, err) = triangulate_point(&rig, [960.0, 540.0], [710.0, 540.0]).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert!(err < 1e-9);
        let (p, err) = triangulate_point(&rig, [1210.0, 540.0], [960.0, 540.0]).unwrap();
        assert!((p - Vec3::new(0.5, 0.0, 2.0)).norm() < 1e-12);
        assert!(err < 1e-9);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let rig = desk_rig();
        assert_eq!(triangulate_point(&rig, [960.0, 540.0], [960.0, 540.0]), Err(GeometryError::DegenerateRays));
    }

    #[test]
    fn crossing_behind_cameras_rejected() {
        // Rays diverge: intersection lies behind both cameras.
        let rig = desk_rig();
        assert_eq!(triangulate_point(&rig, [710.0, 540.0], [960.0, 540.0]), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn frame_sync_guard() {
        let rig = desk_rig();
        let l = KeypointFrame2D::empty(0.0, 0);
        let r = KeypointFrame2D::empty(0.010, 1);
        assert!(matches!(
            triangulate_frame(&rig, &l, &r, DEFAULT_SYNC_TOLERANCE),
            Err(GeometryError::FrameSyncError { .. })
        ));
        let r = KeypointFrame2D::empty(0.0, 0);
        assert_eq!(triangulate_frame(&rig, &l, &r, 0.002), Err(GeometryError::SameCamera(0)));
    }

    #[test]
    fn verify_rig_single_perturbed_pixel() {
        let rig = desk_rig();
        let p = Vec3::new(0.1, -0.2, 2.5);
        let (pl, _) = rig.left.project(&p).unwrap();
        let (pr, _) = rig.right.project(&p).unwrap();
        let exact = verify_rig(&rig, &[Correspondence { point: p, pixel_l: pl, pixel_r: pr }]).unwrap();
        assert!(exact < 1e-9);
        let shifted = Correspondence { point: p, pixel_l: [pl[0] + 3.0, pl[1]], pixel_r: pr };
        let rms = verify_rig(&rig, &[shifted]).unwrap();
        assert!((rms - 3.0 / 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(verify_rig(&rig, &[]), Err(GeometryError::Empty));
    }

    #[test]
    fn invalid_cameras_rejected() {
        let bad_rot = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraModel::new(0, (1.0, 1.0), (0.0, 0.0), (0.0, 0.0), bad_rot, Vec3::zeros()).is_err());
        assert!(CameraModel::new(0, (0.0, 1.0), (0.0, 0.0), (0.0, 0.0), Matrix3::identity(), Vec3::zeros()).is_err());
        let a = axis_camera(0, 0.0, 0.0);
        let b = axis_camera(1, 0.0, 0.0);
        assert!(StereoRig::new(a, b).is_err());
    }

    #[test]
    fn calibration_file_requires_two_cameras() {
        let rig = desk_rig();
        let mut file = CalibrationFile::from_rig(&rig);
        assert_eq!(file.to_rig().unwrap(), rig);
        file.cameras.pop();
        assert!(file.to_rig().is_err());
        let json = r#"{"cameras":[{"id":0,"fx":1,"fy":1,"cx":0,"cy":0,"k1":0,"k2":0,"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0],"extra":1}]}"#;
        assert!(serde_json::from_str::<CalibrationFile>(json).is_err());
    }
}
