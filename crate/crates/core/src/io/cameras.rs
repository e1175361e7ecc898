use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{Error, Result};
use crate::model::Camera;

/// JSON form of a camera. `rotation` is the row-major world-to-camera rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub frame: usize,
    #[serde(default)]
    pub time: f64,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        CameraRecord {
            frame: c.frame,
            time: c.time,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [c.translation.x, c.translation.y, c.translation.z],
            image: c.image.clone(),
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Camera {
        let r = &self.rotation;
        Camera {
            frame: self.frame,
            time: self.time,
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vector3::from(self.translation),
            image: self.image.clone(),
        }
    }
}

/// Cameras from a JSON array, rejecting invalid intrinsics or non-orthonormal rotations
/// and times outside `[0, 1]`.
pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> = read_json(path.as_ref())?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let cam = r.to_camera();
        let mut problems = cam.check();
        if !(0.0..=1.0).contains(&cam.time) {
            problems.push(format!("time {} outside [0, 1]", cam.time));
        }
        if !problems.is_empty() {
            return Err(Error::format("camera", format!("camera {i}: {}", problems.join("; "))));
        }
        out.push(cam);
    }
    Ok(out)
}

pub fn write_cameras(path: impl AsRef<Path>, cameras: &[Camera]) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    write_json(path, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejects_skewed_rotation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        let cam = Camera::look_at(Vector3::new(0.3, 1.0, -4.0), Vector3::zeros(), 60.0, 32, 24).with_frame(3, 0.5);
        write_cameras(&path, std::slice::from_ref(&cam)).unwrap();
        assert_eq!(read_cameras(&path).unwrap(), vec![cam.clone()]);

        let mut bad = CameraRecord::from(&cam);
        bad.rotation[0][0] += 0.1;
        write_json(&path, &vec![bad]).unwrap();
        assert!(matches!(read_cameras(&path), Err(Error::Format { .. })));
    }
}
