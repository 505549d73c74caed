use serde::{Deserialize, Serialize};

use super::{Mat3, Ray, Vec3};
use crate::{Error, Result};

/// Calibrated pinhole camera.
///
/// Camera space is +Z forward, +Y down, +X right; pixel (0, 0) is the top-left
/// corner of the top-left pixel, so the center of pixel `(i, j)` sits at the
/// continuous coordinate `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation.
    pub rotation: Mat3,
    /// Camera center in world coordinates.
    pub translation: Vec3,
}

/// On-disk camera layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraJson {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub convention: String,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        if j.convention != "cam2world" {
            return Err(Error::Argument(format!(
                "camera convention must be \"cam2world\", got {:?}",
                j.convention
            )));
        }
        let rotation = Mat3::from_row_slice(&j.r);
        Camera::new(
            j.width,
            j.height,
            j.fx,
            j.fy,
            j.cx,
            j.cy,
            rotation,
            Vec3::from_row_slice(&j.t),
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = c.rotation[(i, j)];
            }
        }
        CameraJson {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
            convention: "cam2world".into(),
        }
    }
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("camera has zero-sized image".into()));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Argument(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::Argument(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        let orth = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if orth > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Argument("camera rotation is not a proper rotation".into()));
        }
        Ok(Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` (world) pointing towards
    /// the top of the image and a horizontal field of view of `fov_x_deg`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        fov_x_deg: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&super::any_perpendicular(&forward));
        }
        let right = right.normalize();
        // Image +Y points down.
        let down = forward.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, forward]);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Camera::new(
            width,
            height,
            fx,
            fx,
            0.5 * width as f64,
            0.5 * height as f64,
            rotation,
            eye,
        )
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// World-space "up" direction of the image (bottom-to-top).
    pub fn up(&self) -> Vec3 {
        -self.rotation.column(1).into_owned()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Ray through the continuous pixel coordinate `(u, v)`; coordinates are
    /// clamped to the image.
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let u = u.clamp(0.0, self.width as f64);
        let v = v.clamp(0.0, self.height as f64);
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        Ray {
            origin: self.translation,
            dir: (self.rotation * d).normalize(),
        }
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn pixel_ray(&self, i: usize, j: usize) -> Ray {
        self.ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_to_world_dir(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn world_to_camera_dir(&self, d: &Vec3) -> Vec3 {
        self.rotation.transpose() * d
    }

    /// Pinhole projection without bounds checks; `None` behind the camera.
    pub fn project_unbounded(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// Projects a world point to `(u, v)` pixel coordinates and depth along
    /// the optical axis. `None` when behind the camera or outside the image.
    pub fn project(&self, p: &Vec3) -> Option<((f64, f64), f64)> {
        let (u, v, z) = self.project_unbounded(p)?;
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some(((u, v), z))
    }

    /// Cosine between the direction from the camera center to `p` and the
    /// optical axis, clamped to `[0, 1]`.
    pub fn view_cosine(&self, p: &Vec3) -> f64 {
        let d = p - self.translation;
        let n = d.norm();
        if n == 0.0 {
            return 0.0;
        }
        (d.dot(&self.forward()) / n).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_camera() -> Camera {
        Camera::look_at(
            Vec3::new(0.3, -2.0, 2.5),
            Vec3::new(0.0, 0.1, 0.0),
            Vec3::y(),
            64,
            48,
            40.0,
        )
        .unwrap()
    }

    #[test]
    fn principal_point_maps_to_forward_axis() {
        let c = test_camera();
        let r = c.ray(c.cx, c.cy);
        assert!((r.dir - c.forward()).norm() < 1e-12);
    }

    #[test]
    fn identity_pose_direction() {
        let c = Camera {
            width: 4,
            height: 4,
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        };
        let r = c.ray(1.0, 0.0);
        assert!((r.dir - Vec3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-12);
    }

    #[test]
    fn forward_point_projects_to_principal_point() {
        let c = test_camera();
        let ((u, v), z) = c.project(&(c.center() + c.forward())).unwrap();
        assert!((u - c.cx).abs() < 1e-9 && (v - c.cy).abs() < 1e-9);
        assert!((z - 1.0).abs() < 1e-12);
        assert!(c.project(&(c.center() - c.forward())).is_none());
    }

    #[test]
    fn json_round_trip() {
        let c = test_camera();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"convention\":\"cam2world\""));
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut r = Mat3::identity();
        r[(0, 0)] = -1.0;
        assert!(Camera::new(4, 4, 1.0, 1.0, 2.0, 2.0, r, Vec3::zeros()).is_err());
    }

    #[test]
    fn up_points_to_image_top() {
        let c = test_camera();
        let top = c.ray(c.cx, 0.0).dir;
        assert!(top.dot(&c.up()) > 0.0);
    }

    proptest! {
        #[test]
        fn ray_and_project_are_inverse(u in 0.0f64..63.99, v in 0.0f64..47.99, t in 0.1f64..50.0) {
            let c = test_camera();
            let r = c.ray(u, v);
            prop_assert!((r.dir.norm() - 1.0).abs() < 1e-12);
            let ((pu, pv), _) = c.project(&r.at(t)).unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }
    }
}
