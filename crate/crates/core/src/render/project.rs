use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::RenderSettings;
use crate::model::{quat_to_matrix, Camera, Gaussian, PARAMS_PER_GAUSSIAN};

/// A Gaussian after projection to the image plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splat2D {
    /// Pixel coordinates; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub mean2d: [f64; 2],
    /// Symmetric 2x2 covariance `(xx, xy, yy)` in pixel², low-pass floor included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source: usize,
    /// Half extents of the box outside which alpha stays below the cutoff.
    pub extent: [f64; 2],
}

/// Intermediate quantities of one projection, kept for the backward pass.
pub(crate) struct Projection {
    cam: Vector3<f64>,
    t: Matrix2x3<f64>,
    rot: Matrix3<f64>,
    scale: Vector3<f64>,
    m: Matrix3<f64>,
    sigma: Matrix3<f64>,
    qhat: Vector4<f64>,
    qnorm: f64,
    conic: Matrix2<f64>,
    pub(crate) splat: Splat2D,
}

pub(crate) fn project_one(
    g: &Gaussian,
    source: usize,
    camera: &Camera,
    settings: &RenderSettings,
) -> Option<Projection> {
    let cam = camera.to_camera(&g.mean);
    if cam.z <= settings.near {
        return None;
    }
    let opacity = g.opacity();
    if !(opacity >= settings.alpha_min) {
        return None;
    }
    let (x, y, z) = (cam.x, cam.y, cam.z);
    let j = Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * y / (z * z),
    );
    let t = j * camera.rotation;
    let qnorm = g.rotation.norm();
    let qhat = g.rotation / qnorm;
    let rot = quat_to_matrix(&qhat);
    let scale = g.scale();
    let m = rot * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let cov = t * sigma * t.transpose() + Matrix2::identity() * settings.low_pass;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let reach = 2.0 * (opacity / settings.alpha_min).ln();
    let extent = [(reach * cov[(0, 0)]).sqrt(), (reach * cov[(1, 1)]).sqrt()];
    let mean2d = [
        camera.fx * x / z + camera.cx,
        camera.fy * y / z + camera.cy,
    ];
    let splat = Splat2D {
        mean2d,
        cov2d: [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]],
        conic: [conic[(0, 0)], conic[(0, 1)], conic[(1, 1)]],
        depth: z,
        color: [g.color.x, g.color.y, g.color.z],
        opacity,
        source,
        extent,
    };
    Some(Projection {
        cam,
        t,
        rot,
        scale,
        m,
        sigma,
        qhat,
        qnorm,
        conic,
        splat,
    })
}

/// Project the selected Gaussians (all when `subset` is `None`), cull those behind the
/// near plane or entirely off-screen, and sort by depth with ties broken by source index.
pub fn project(
    gaussians: &[Gaussian],
    subset: Option<&[usize]>,
    camera: &Camera,
    settings: &RenderSettings,
) -> Vec<Splat2D> {
    let mut splats: Vec<Splat2D> = match subset {
        Some(idx) => idx
            .iter()
            .filter_map(|&i| project_one(&gaussians[i], i, camera, settings))
            .map(|p| p.splat)
            .collect(),
        None => gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project_one(g, i, camera, settings))
            .map(|p| p.splat)
            .collect(),
    };
    let (w, h) = (camera.width as f64, camera.height as f64);
    splats.retain(|s| {
        s.mean2d[0] + s.extent[0] > 0.0
            && s.mean2d[0] - s.extent[0] < w
            && s.mean2d[1] + s.extent[1] > 0.0
            && s.mean2d[1] - s.extent[1] < h
    });
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source)));
    splats
}

/// Loss gradient with respect to one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean2d: [f64; 2],
    /// Gradient for `(xx, xy, yy)` where `xy` stands for both off-diagonal entries.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Chain a splat gradient back to the Gaussian's stored parameters, adding into `out`
/// in the layout of [`Gaussian::params`].
pub(crate) fn project_backward(
    proj: &Projection,
    camera: &Camera,
    grad: &SplatGrad,
    out: &mut [f64; PARAMS_PER_GAUSSIAN],
) {
    let (fx, fy) = (camera.fx, camera.fy);
    let (x, y, z) = (proj.cam.x, proj.cam.y, proj.cam.z);

    // conic -> covariance: dA = -Q G Q with G the symmetric gradient matrix
    let gq = Matrix2::new(
        grad.conic[0],
        0.5 * grad.conic[1],
        0.5 * grad.conic[1],
        grad.conic[2],
    );
    let d_cov = -(proj.conic * gq * proj.conic);

    // covariance = T Sigma T^T, T = J W
    let d_sigma = proj.t.transpose() * d_cov * proj.t;
    let d_t = 2.0 * d_cov * proj.t * proj.sigma;
    let d_j = d_t * camera.rotation.transpose();

    let mut d_cam = Vector3::zeros();
    // mean2d
    d_cam.x += grad.mean2d[0] * fx / z;
    d_cam.y += grad.mean2d[1] * fy / z;
    d_cam.z += -grad.mean2d[0] * fx * x / (z * z) - grad.mean2d[1] * fy * y / (z * z);
    // Jacobian entries
    let z2 = z * z;
    let z3 = z2 * z;
    d_cam.x += d_j[(0, 2)] * (-fx / z2);
    d_cam.y += d_j[(1, 2)] * (-fy / z2);
    d_cam.z += d_j[(0, 0)] * (-fx / z2)
        + d_j[(1, 1)] * (-fy / z2)
        + d_j[(0, 2)] * (2.0 * fx * x / z3)
        + d_j[(1, 2)] * (2.0 * fy * y / z3);
    let d_mean = camera.rotation.transpose() * d_cam;

    // Sigma = M M^T, M = R S
    let d_m = 2.0 * d_sigma * proj.m;
    let mut d_log_scale = [0.0; 3];
    for k in 0..3 {
        let ds = (0..3).map(|i| d_m[(i, k)] * proj.rot[(i, k)]).sum::<f64>();
        d_log_scale[k] = ds * proj.scale[k];
    }
    let mut d_rot = d_m;
    for k in 0..3 {
        for i in 0..3 {
            d_rot[(i, k)] *= proj.scale[k];
        }
    }
    let dq_hat = quat_matrix_backward(&proj.qhat, &d_rot);
    let dq = (dq_hat - proj.qhat * proj.qhat.dot(&dq_hat)) / proj.qnorm;

    let o = grad.opacity * proj.splat.opacity * (1.0 - proj.splat.opacity);

    for k in 0..3 {
        out[k] += d_mean[k];
        out[7 + k] += d_log_scale[k];
        out[11 + k] += grad.color[k];
    }
    for k in 0..4 {
        out[3 + k] += dq[k];
    }
    out[10] += o;
}

/// Gradient of a loss with respect to the unit quaternion, given its gradient with
/// respect to the rotation matrix produced by [`quat_to_matrix`].
fn quat_matrix_backward(q: &Vector4<f64>, d: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0
        * (-z * d[(0, 1)] + y * d[(0, 2)] + z * d[(1, 0)] - x * d[(1, 2)] - y * d[(2, 0)]
            + x * d[(2, 1)]);
    let dx = 2.0
        * (y * d[(0, 1)] + z * d[(0, 2)] + y * d[(1, 0)] - 2.0 * x * d[(1, 1)] - w * d[(1, 2)]
            + z * d[(2, 0)]
            + w * d[(2, 1)]
            - 2.0 * x * d[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * d[(0, 0)] + x * d[(0, 1)] + w * d[(0, 2)] + x * d[(1, 0)] + z * d[(1, 2)]
            - w * d[(2, 0)]
            + z * d[(2, 1)]
            - 2.0 * y * d[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * d[(0, 0)] - w * d[(0, 1)] + x * d[(0, 2)] + w * d[(1, 0)]
            - 2.0 * z * d[(1, 1)]
            + y * d[(1, 2)]
            + x * d[(2, 0)]
            + y * d[(2, 1)]);
    Vector4::new(dw, dx, dy, dz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_axis_gaussian_lands_on_principal_point() {
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), 40.0, 32, 24);
        let g = Gaussian::new(Vector3::zeros(), Vector3::repeat(1.0), 0.1, 0.5);
        let p = project_one(&g, 0, &cam, &RenderSettings::default()).unwrap();
        assert!((p.splat.mean2d[0] - 16.0).abs() < 1e-12);
        assert!((p.splat.mean2d[1] - 12.0).abs() < 1e-12);
        assert!((p.splat.depth - 4.0).abs() < 1e-12);
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), 40.0, 32, 24);
        let g = Gaussian::new(Vector3::new(0.0, 0.0, -5.0), Vector3::repeat(1.0), 0.1, 0.5);
        assert!(project(&[g], None, &cam, &RenderSettings::default()).is_empty());
    }

    #[test]
    fn quaternion_matrix_gradient_matches_differences() {
        let q = Vector4::new(0.7, -0.2, 0.4, 0.3).normalize();
        let d = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.7, 0.9, 0.4, -0.2);
        let analytic = quat_matrix_backward(&q, &d);
        for k in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let f = |q: &Vector4<f64>| quat_to_matrix(q).component_mul(&d).sum();
            let numeric = (f(&qp) - f(&qm)) / (2.0 * h);
            assert!((numeric - analytic[k]).abs() < 1e-7, "{k}: {numeric} vs {}", analytic[k]);
        }
    }
}
