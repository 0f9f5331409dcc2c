//! Pinhole cameras and rectified stereo rigs.
//!
//! Pixel convention: pixel `i` has its center at continuous coordinate `i`,
//! so pixel `i` covers `[i - 0.5, i + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Smallest camera-frame depth treated as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

/// On-disk camera schema: 3x3 rotation row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
    width: usize,
    height: usize,
}

impl TryFrom<CameraJson> for PinholeCamera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        PinholeCamera::new(
            [j.fx, j.fy, j.cx, j.cy],
            Matrix3::from_row_slice(&j.rotation),
            Vector3::from(j.translation),
            j.width,
            j.height,
        )
    }
}

impl From<PinholeCamera> for CameraJson {
    fn from(c: PinholeCamera) -> Self {
        let r = c.rotation;
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            width: c.width,
            height: c.height,
        }
    }
}

impl PinholeCamera {
    /// `intrinsics` is `[fx, fy, cx, cy]`.
    pub fn new(
        intrinsics: [f64; 4],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("camera image size must be positive".into()));
        }
        let gram = rotation * rotation.transpose();
        if (gram - Matrix3::identity()).abs().max() > ORTHONORMAL_TOL {
            return Err(Error::Config("camera rotation is not orthonormal".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `position` looking at `target`, image y pointing along world -`up`.
    pub fn look_at(
        intrinsics: [f64; 4],
        position: Point3,
        target: Point3,
        up: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at target equals position".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * position);
        Self::new(intrinsics, rotation, translation, width, height)
    }

    pub fn intrinsics(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Point3) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Projects a world point to `(u, v, depth)`; `None` behind the camera.
    pub fn project(&self, world: &Point3) -> Option<(f64, f64, f64)> {
        let p = self.to_camera(world);
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ))
    }

    /// World-frame ray direction through `(u, v)` scaled to unit camera depth,
    /// so `center + z * dir` lies at depth `z`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation.transpose() * cam
    }

    /// Pixel index containing continuous coordinate `(u, v)`, if inside the image.
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let x = (u + 0.5).floor();
        let y = (v + 0.5).floor();
        (x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64)
            .then_some((x as usize, y as usize))
    }
}

/// Rectified stereo pair: identical intrinsics and rotation, right camera
/// displaced by `baseline` along the camera x-axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigJson", into = "RigJson")]
pub struct StereoRig {
    pub left: PinholeCamera,
    pub right: PinholeCamera,
    pub baseline: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RigJson {
    left: PinholeCamera,
    right: PinholeCamera,
    baseline: f64,
}

impl TryFrom<RigJson> for StereoRig {
    type Error = Error;

    fn try_from(j: RigJson) -> Result<Self> {
        let rig = StereoRig {
            left: j.left,
            right: j.right,
            baseline: j.baseline,
        };
        rig.validate()?;
        Ok(rig)
    }
}

impl From<StereoRig> for RigJson {
    fn from(r: StereoRig) -> Self {
        RigJson {
            left: r.left,
            right: r.right,
            baseline: r.baseline,
        }
    }
}

impl StereoRig {
    /// Builds the right camera from the left one.
    pub fn from_left(left: PinholeCamera, baseline: f64) -> Result<Self> {
        let mut right = left.clone();
        right.translation = left.translation - Vector3::new(baseline, 0.0, 0.0);
        let rig = Self {
            left,
            right,
            baseline,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline > 0.0) {
            return Err(Error::Config(format!("baseline must be positive, got {}", self.baseline)));
        }
        let (l, r) = (&self.left, &self.right);
        let same_intrinsics = l.intrinsics() == r.intrinsics()
            && l.width == r.width
            && l.height == r.height;
        if !same_intrinsics {
            return Err(Error::Config("rig cameras have different intrinsics".into()));
        }
        if (l.rotation - r.rotation).abs().max() > ORTHONORMAL_TOL {
            return Err(Error::Config("rig cameras have different rotations".into()));
        }
        let offset = l.translation - r.translation;
        let tol = 1e-9 * self.baseline.max(1.0);
        if (offset.x - self.baseline).abs() > tol || offset.y.abs() > tol || offset.z.abs() > tol {
            return Err(Error::Config("rig is not rectified along the camera x-axis".into()));
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        self.left.fx
    }

    pub fn width(&self) -> usize {
        self.left.width
    }

    pub fn height(&self) -> usize {
        self.left.height
    }

    pub fn disparity_from_depth(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("depth must be positive, got {z}")));
        }
        Ok(self.fx() * self.baseline / z)
    }

    pub fn depth_from_disparity(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(Error::Domain(format!("disparity must be positive, got {d}")));
        }
        Ok(self.fx() * self.baseline / d)
    }
}

/// A binary silhouette paired with the camera that observed it.
#[derive(Clone, Debug)]
pub struct SilhouetteMask {
    mask: crate::image::Mask,
    camera: PinholeCamera,
}

impl SilhouetteMask {
    pub fn new(mask: crate::image::Mask, camera: PinholeCamera) -> Result<Self> {
        if mask.width() != camera.width || mask.height() != camera.height {
            return Err(Error::Input(format!(
                "mask is {}x{} but camera expects {}x{}",
                mask.width(),
                mask.height(),
                camera.width,
                camera.height
            )));
        }
        Ok(Self { mask, camera })
    }

    pub fn mask(&self) -> &crate::image::Mask {
        &self.mask
    }

    pub fn camera(&self) -> &PinholeCamera {
        &self.camera
    }
}

/// Stereo rig plus the silhouette cameras of a capture, as stored in `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSet {
    pub rig: StereoRig,
    pub ring: Vec<PinholeCamera>,
}

impl CameraSet {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Default 640x480 rig with 15 cm baseline at the world origin, looking down +z.
pub fn desk_rig() -> StereoRig {
    let left = PinholeCamera::new(
        [500.0, 500.0, 319.5, 239.5],
        Matrix3::identity(),
        Vector3::zeros(),
        640,
        480,
    )
    .expect("static camera parameters are valid");
    StereoRig::from_left(left, 0.15).expect("static rig parameters are valid")
}

/// `count` cameras on a horizontal ring around `target`, alternating above and
/// below the ring plane by `elevation` meters.
pub fn ring_cameras(
    count: usize,
    target: Point3,
    radius: f64,
    elevation: f64,
    intrinsics: [f64; 4],
    width: usize,
    height: usize,
) -> Result<Vec<PinholeCamera>> {
    let up = Vector3::new(0.0, -1.0, 0.0);
    (0..count)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / count as f64;
            let lift = if i % 2 == 0 { -elevation } else { elevation };
            let position = target
                + Vector3::new(radius * angle.sin(), lift, -radius * angle.cos());
            PinholeCamera::look_at(intrinsics, position, target, up, width, height)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rig(fx: f64, baseline: f64) -> StereoRig {
        let left = PinholeCamera::new(
            [fx, fx, 100.0, 80.0],
            Matrix3::identity(),
            Vector3::zeros(),
            200,
            160,
        )
        .unwrap();
        StereoRig::from_left(left, baseline).unwrap()
    }

    #[test]
    fn disparity_from_depth_formula() {
        let rig = rig(400.0, 0.2);
        assert_relative_eq!(rig.disparity_from_depth(2.0).unwrap(), 40.0);
        assert!(rig.disparity_from_depth(1e9).unwrap() < 1e-6);
    }

    #[test]
    fn depth_disparity_round_trip() {
        let rig = rig(400.0, 0.2);
        for z in [0.3, 1.0, 2.0, 7.5, 120.0] {
            let back = rig
                .depth_from_disparity(rig.disparity_from_depth(z).unwrap())
                .unwrap();
            assert_relative_eq!(back, z, max_relative = 1e-9);
        }
    }

    #[test]
    fn nonpositive_depth_is_a_domain_error() {
        let rig = rig(400.0, 0.2);
        assert!(matches!(rig.disparity_from_depth(0.0), Err(Error::Domain(_))));
        assert!(matches!(rig.disparity_from_depth(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rectified_projection_matches_disparity() {
        let rig = rig(400.0, 0.2);
        let p = Point3::new(0.3, -0.1, 2.0);
        let (ul, vl, _) = rig.left.project(&p).unwrap();
        let (ur, vr, _) = rig.right.project(&p).unwrap();
        assert_relative_eq!(vl, vr, epsilon = 1e-12);
        assert_relative_eq!(ul - ur, 40.0, epsilon = 1e-9);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let r = Matrix3::identity() * 1.01;
        assert!(PinholeCamera::new([1.0, 1.0, 0.0, 0.0], r, Vector3::zeros(), 4, 4).is_err());
    }

    #[test]
    fn unrectified_rig_rejected() {
        let rig = rig(400.0, 0.2);
        let mut bad = rig.clone();
        bad.right.translation.y += 0.01;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let target = Point3::new(0.0, 0.0, 2.0);
        let cams = ring_cameras(12, target, 2.5, 0.5, [500.0, 500.0, 319.5, 239.5], 640, 480)
            .unwrap();
        for cam in &cams {
            let (u, v, z) = cam.project(&target).unwrap();
            assert_relative_eq!(u, 319.5, epsilon = 1e-9);
            assert_relative_eq!(v, 239.5, epsilon = 1e-9);
            assert!(z > 2.0);
        }
    }

    #[test]
    fn ray_direction_reaches_pixel() {
        let cams = ring_cameras(4, Point3::new(0.0, 0.0, 2.0), 2.0, 0.3, [300.0, 310.0, 50.0, 40.0], 100, 80)
            .unwrap();
        let cam = &cams[1];
        let p = cam.center() + cam.ray_direction(12.25, 70.5) * 1.7;
        let (u, v, z) = cam.project(&p).unwrap();
        assert_relative_eq!(u, 12.25, epsilon = 1e-9);
        assert_relative_eq!(v, 70.5, epsilon = 1e-9);
        assert_relative_eq!(z, 1.7, epsilon = 1e-9);
    }

    #[test]
    fn camera_set_json_round_trip() {
        let set = CameraSet {
            rig: desk_rig(),
            ring: ring_cameras(3, Point3::new(0.0, 0.0, 2.0), 2.5, 0.5, [500.0, 500.0, 319.5, 239.5], 640, 480)
                .unwrap(),
        };
        let text = serde_json::to_string(&set).unwrap();
        let back: CameraSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back.rig.baseline, set.rig.baseline);
        assert_eq!(back.ring.len(), 3);
        assert!((back.ring[1].rotation - set.ring[1].rotation).abs().max() < 1e-15);
    }
}
