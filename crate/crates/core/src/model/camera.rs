use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Pinhole camera, OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub frame: usize,
    #[serde(default)]
    pub time: f64,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    /// Ground-truth image file, relative to the camera file.
    #[serde(default)]
    pub image: Option<String>,
}

impl Camera {
    /// Camera at `eye` looking at `target` with world `+y` up. Principal point at the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&Vector3::y());
        if right.norm() < 1e-9 {
            right = Vector3::x();
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            frame: 0,
            time: 0.0,
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: -(rotation * eye),
            image: None,
        }
    }

    pub fn with_frame(mut self, frame: usize, time: f64) -> Self {
        self.frame = frame;
        self.time = time;
        self
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates of a world point, or `None` behind `near`.
    pub fn project_point(&self, p: &Vector3<f64>, near: f64) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= near {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    /// Pixel index of a world point when it lands inside the image in front of the camera.
    pub fn pixel_of(&self, p: &Vector3<f64>, near: f64) -> Option<(u32, u32)> {
        let (u, v) = self.project_point(p, near)?;
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (x, y) = (u.floor() as u64, v.floor() as u64);
        if x >= self.width as u64 || y >= self.height as u64 {
            return None;
        }
        Some((x as u32, y as u32))
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Invariant violations of this camera, as human-readable strings.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push("focal length must be positive".to_string());
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            out.push(format!("rotation not orthonormal (error {err:.3e})"));
        }
        if self.width == 0 || self.height == 0 {
            out.push("zero image size".to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(Vector3::new(1.0, 0.5, 3.0), Vector3::zeros(), 50.0, 64, 48);
        let (u, v) = cam.project_point(&Vector3::zeros(), 0.01).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9);
        assert!(cam.check().is_empty());
        assert!((cam.center() - Vector3::new(1.0, 0.5, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn image_y_points_down() {
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), 50.0, 64, 64);
        let (_, v_up) = cam.project_point(&Vector3::new(0.0, 0.5, 0.0), 0.01).unwrap();
        assert!(v_up < 32.0);
    }

    #[test]
    fn flags_bad_intrinsics() {
        let mut cam = Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), 50.0, 64, 64);
        cam.fx = -1.0;
        cam.rotation[(0, 0)] *= 2.0;
        assert_eq!(cam.check().len(), 2);
    }
}
