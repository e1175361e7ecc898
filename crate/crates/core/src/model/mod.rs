//! Scene data model shared by every stage of the pipeline.

mod camera;
mod masks;
mod scene;

pub use camera::Camera;
pub use masks::{IdMap, Mask, TrackInfo, TrackMerge, TrackRegistry, TrackedMasks};
pub use scene::{validate_scene, ObjectSet, SceneModel, Violation};

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Object id shared by unsegmented pixels and background Gaussians at every level.
pub const BACKGROUND: u32 = 0;

/// Segmentation scale. Ordered by containment: `Small < Middle < Large`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Small,
    Middle,
    Large,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Small, Granularity::Middle, Granularity::Large];

    pub fn index(self) -> usize {
        match self {
            Granularity::Small => 0,
            Granularity::Middle => 1,
            Granularity::Large => 2,
        }
    }

    /// Single-letter tag used in mask file names.
    pub fn letter(self) -> char {
        match self {
            Granularity::Small => 'S',
            Granularity::Middle => 'M',
            Granularity::Large => 'L',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'S' => Some(Granularity::Small),
            'M' => Some(Granularity::Middle),
            'L' => Some(Granularity::Large),
            _ => None,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Granularity::Small => "Small",
            Granularity::Middle => "Middle",
            Granularity::Large => "Large",
        };
        f.write_str(name)
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "small" => Ok(Granularity::Small),
            "m" | "middle" => Ok(Granularity::Middle),
            "l" | "large" => Ok(Granularity::Large),
            other => Err(Error::Invalid(format!("unknown granularity '{other}'"))),
        }
    }
}

/// The three per-level object ids carried by every Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectIds {
    pub large: u32,
    pub middle: u32,
    pub small: u32,
}

impl ObjectIds {
    pub fn new(large: u32, middle: u32, small: u32) -> Self {
        ObjectIds {
            large,
            middle,
            small,
        }
    }

    pub fn get(&self, level: Granularity) -> u32 {
        match level {
            Granularity::Small => self.small,
            Granularity::Middle => self.middle,
            Granularity::Large => self.large,
        }
    }

    pub fn set(&mut self, level: Granularity, id: u32) {
        match level {
            Granularity::Small => self.small = id,
            Granularity::Middle => self.middle = id,
            Granularity::Large => self.large = id,
        }
    }

    pub fn is_background(&self) -> bool {
        self.small == BACKGROUND && self.middle == BACKGROUND && self.large == BACKGROUND
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Number of optimizable scalars per Gaussian: mean(3) rotation(4) log-scale(3) opacity(1) color(3).
pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// One anisotropic splat primitive.
///
/// Rotation is a `(w, x, y, z)` quaternion; scale is stored in log space and the
/// opacity as a logit, so every stored value is unconstrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub ids: ObjectIds,
}

impl Gaussian {
    pub fn new(mean: Vector3<f64>, color: Vector3<f64>, scale: f64, opacity: f64) -> Self {
        Gaussian {
            mean,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            color,
            ids: ObjectIds::default(),
        }
    }

    pub fn with_ids(mut self, ids: ObjectIds) -> Self {
        self.ids = ids;
        self
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation.normalize())
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 {
            self.rotation /= n;
        } else {
            self.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
    }

    pub fn params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.mean.as_slice());
        p[3..7].copy_from_slice(self.rotation.as_slice());
        p[7..10].copy_from_slice(self.log_scale.as_slice());
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(self.color.as_slice());
        p
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_GAUSSIAN]) {
        self.mean = Vector3::new(p[0], p[1], p[2]);
        self.rotation = Vector4::new(p[3], p[4], p[5], p[6]);
        self.log_scale = Vector3::new(p[7], p[8], p[9]);
        self.opacity_logit = p[10];
        self.color = Vector3::new(p[11], p[12], p[13]);
    }
}

/// Rotation matrix of a unit `(w, x, y, z)` quaternion.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion `(w, x, y, z)` for a rotation of `angle` radians about `axis`.
pub fn quat_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Vector4<f64> {
    let a = axis.normalize() * (angle * 0.5).sin();
    Vector4::new((angle * 0.5).cos(), a.x, a.y, a.z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn granularity_orders_by_containment() {
        assert!(Granularity::Small < Granularity::Middle);
        assert!(Granularity::Middle < Granularity::Large);
        for g in Granularity::ALL {
            assert_eq!(Granularity::from_letter(g.letter()), Some(g));
            assert_eq!(g.to_string().parse::<Granularity>().unwrap(), g);
        }
    }

    #[test]
    fn covariance_is_rotated_scale() {
        let mut g = Gaussian::new(Vector3::zeros(), Vector3::zeros(), 1.0, 0.5);
        g.log_scale = Vector3::new(0.0, 2f64.ln(), 3f64.ln());
        g.rotation = quat_from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let cov = g.covariance();
        // x and y axes swap under a quarter turn about z
        assert!((cov[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((cov[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((cov[(2, 2)] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let mut g = Gaussian::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.1, 0.2, 0.3), 0.5, 0.3);
        let mut p = g.params();
        p[10] = 1.5;
        g.set_params(&p);
        assert_eq!(g.params(), p);
        assert!((g.opacity() - sigmoid(1.5)).abs() < 1e-15);
    }
}
