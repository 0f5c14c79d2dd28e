use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field of view used throughout blending and dataset rendering.
pub const DEFAULT_FOV_DEG: f64 = 30.0;
pub const DEFAULT_VIEW_SIZE: usize = 512;

/// Pinhole perspective camera. `fov_deg` is the vertical field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Point3<f64>,
    pub look_at: Point3<f64>,
    pub up: Vector3<f64>,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal camera frame: `right` and `up` span the image plane,
/// `forward` points into the scene.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    pub forward: Vector3<f64>,
}

impl Camera {
    pub fn new(position: Point3<f64>, look_at: Point3<f64>, width: usize, height: usize) -> Self {
        Self {
            position,
            look_at,
            up: Vector3::y(),
            fov_deg: DEFAULT_FOV_DEG,
            width,
            height,
        }
    }

    pub fn with_fov(mut self, fov_deg: f64) -> Self {
        self.fov_deg = fov_deg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if (self.position - self.look_at).norm() <= 0.0 {
            return Err(Error::Invalid(
                "camera position equals look-at point".into(),
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Invalid(format!(
                "fov {} outside (0, 180)",
                self.fov_deg
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("view size must be at least 1x1".into()));
        }
        Ok(())
    }

    /// Look-at frame. When `up` is parallel to the viewing direction a fixed
    /// fallback axis is used so the frame is always well defined.
    pub fn frame(&self) -> CameraFrame {
        let forward = (self.look_at - self.position).normalize();
        let mut right = forward.cross(&self.up);
        if right.norm() < 1e-9 {
            for alt in [Vector3::z(), Vector3::x()] {
                right = forward.cross(&alt);
                if right.norm() >= 1e-9 {
                    break;
                }
            }
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        CameraFrame { right, up, forward }
    }

    pub fn tan_half_fov(&self) -> f64 {
        (self.fov_deg.to_radians() * 0.5).tan()
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// World point to camera coordinates `(x right, y up, z forward)`.
    pub fn to_camera(&self, frame: &CameraFrame, p: &Point3<f64>) -> Vector3<f64> {
        let q = p - self.position;
        Vector3::new(q.dot(&frame.right), q.dot(&frame.up), q.dot(&frame.forward))
    }

    /// Camera coordinates (with `z > 0`) to continuous pixel coordinates,
    /// `y` growing downward. Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub fn to_screen(&self, c: &Vector3<f64>) -> [f64; 2] {
        let t = self.tan_half_fov();
        let ndc_x = c.x / (c.z * t * self.aspect());
        let ndc_y = c.y / (c.z * t);
        [
            (ndc_x + 1.0) * 0.5 * self.width as f64,
            (1.0 - ndc_y) * 0.5 * self.height as f64,
        ]
    }

    /// Unit ray direction through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, frame: &CameraFrame, x: usize, y: usize) -> Vector3<f64> {
        let t = self.tan_half_fov();
        let ndc_x = 2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0;
        let ndc_y = 1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64;
        (frame.forward + frame.right * (ndc_x * t * self.aspect()) + frame.up * (ndc_y * t))
            .normalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_point_projects_to_center() {
        let cam = Camera::new(
            Point3::new(1.0, 2.0, 3.0),
            Point3::new(0.0, 0.5, -1.0),
            64,
            48,
        );
        let f = cam.frame();
        let c = cam.to_camera(&f, &cam.look_at);
        let s = cam.to_screen(&c);
        assert!((s[0] - 32.0).abs() < 1e-9 && (s[1] - 24.0).abs() < 1e-9);
    }

    #[test]
    fn frame_is_orthonormal_even_when_up_is_parallel() {
        let cam = Camera::new(Point3::new(0.0, 1.0, 0.0), Point3::origin(), 8, 8);
        let f = cam.frame();
        assert!((f.right.norm() - 1.0).abs() < 1e-12);
        assert!(f.right.dot(&f.forward).abs() < 1e-12);
        assert!(f.up.dot(&f.forward).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut cam = Camera::new(Point3::origin(), Point3::origin(), 8, 8);
        assert!(cam.validate().is_err());
        cam.look_at = Point3::new(0.0, 0.0, -1.0);
        assert!(cam.validate().is_ok());
        cam.fov_deg = 180.0;
        assert!(cam.validate().is_err());
    }
}
