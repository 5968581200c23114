use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with an OpenCV-style frame: x right, y down, z forward.
/// Pixel `(i, j)` samples the image plane at exactly `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` breaks the roll ambiguity.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Self::from_pose(r, t, focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_pose(
        r: Matrix3<f64>,
        t: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[(i, j)];
            }
        }
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }

    /// Unit optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation_matrix().row(2).transpose()
    }

    /// World-space ray through pixel coordinates `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let dir = (self.rotation_matrix().transpose() * dir_cam).normalize();
        (self.center(), dir)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.fx, self.fy, self.cx, self.cy];
        if scalars.iter().any(|v| !v.is_finite())
            || self.rotation.iter().flatten().any(|v| !v.is_finite())
            || self.translation.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("camera parameters"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera has zero-sized image"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::invalid("principal point outside the image"));
        }
        let r = self.rotation_matrix();
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(Error::invalid("camera rotation is not orthonormal"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Cameras on a viewing sphere of `radius` around the origin: azimuths
    /// spread uniformly, alternating between two elevation rings.
    pub fn orbit(views: usize, radius: f64, focal: f64, width: usize, height: usize) -> Self {
        let elevations = [20f64.to_radians(), -25f64.to_radians()];
        let cameras = (0..views)
            .map(|i| {
                let azimuth = std::f64::consts::TAU * i as f64 / views as f64 + 0.1;
                let el = elevations[i % 2];
                let eye = Vector3::new(
                    radius * el.cos() * azimuth.cos(),
                    radius * el.cos() * azimuth.sin(),
                    radius * el.sin(),
                );
                Camera::look_at(eye, Vector3::zeros(), Vector3::z(), focal, width, height)
            })
            .collect();
        Self { cameras }
    }

    pub fn validate(&self) -> Result<()> {
        self.cameras.iter().try_for_each(Camera::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_axis_passes_through_target() {
        let rig = CameraRig::orbit(12, 3.0, 80.0, 64, 64);
        for cam in &rig.cameras {
            cam.validate().unwrap();
            let c = cam.center();
            let f = cam.forward();
            // distance from origin to the optical axis line
            let dist = (c - f * c.dot(&f)).norm();
            assert!(dist < 1e-6);
            let p = cam.to_camera(&Vector3::zeros());
            assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z > 0.0);
        }
    }

    #[test]
    fn validate_rejects_bad_intrinsics() {
        let mut cam = Camera::look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), Vector3::z(), 50.0, 32, 32);
        cam.validate().unwrap();
        cam.fx = f64::NAN;
        assert!(cam.validate().is_err());
        cam.fx = -1.0;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn ray_through_principal_point_is_forward() {
        let cam = Camera::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), Vector3::z(), 50.0, 32, 32);
        let (o, d) = cam.ray(cam.cx, cam.cy);
        assert!((o - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!((d - cam.forward()).norm() < 1e-12);
    }
}
