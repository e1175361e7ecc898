//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use segsplat::render::RenderSettings;
use segsplat::{Camera, Gaussian};

/// Per-pixel reference compositor: every Gaussian is evaluated at every pixel center, in
/// depth order, with no tiling, binning or culling beyond the near plane.
pub fn naive_composite(gaussians: &[Gaussian], camera: &Camera, settings: &RenderSettings) -> (Vec<f64>, Vec<f64>) {
    struct Flat {
        depth: f64,
        index: usize,
        mean: [f64; 2],
        inv: Matrix2<f64>,
        opacity: f64,
        color: Vector3<f64>,
    }
    let mut flats = Vec::new();
    for (index, g) in gaussians.iter().enumerate() {
        let pc = camera.rotation * g.mean + camera.translation;
        if pc.z <= settings.near {
            continue;
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]));
        let r = q.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&g.log_scale.map(f64::exp));
        let cov3 = r * s * s * r.transpose();
        let j = Matrix2x3::new(
            camera.fx / pc.z,
            0.0,
            -camera.fx * pc.x / (pc.z * pc.z),
            0.0,
            camera.fy / pc.z,
            -camera.fy * pc.y / (pc.z * pc.z),
        );
        let jw = j * camera.rotation;
        let cov2 = jw * cov3 * jw.transpose() + Matrix2::identity() * settings.low_pass;
        let Some(inv) = cov2.try_inverse() else { continue };
        flats.push(Flat {
            depth: pc.z,
            index,
            mean: [camera.fx * pc.x / pc.z + camera.cx, camera.fy * pc.y / pc.z + camera.cy],
            inv,
            opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
            color: g.color,
        });
    }
    flats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut image = vec![0.0; 3 * w * h];
    let mut alpha = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            for f in &flats {
                let d = nalgebra::Vector2::new(x as f64 + 0.5 - f.mean[0], y as f64 + 0.5 - f.mean[1]);
                let a = f.opacity * (-0.5 * d.dot(&(f.inv * d))).exp();
                if a < settings.alpha_min {
                    continue;
                }
                let a = a.min(settings.alpha_max);
                c += f.color * a * t;
                t *= 1.0 - a;
                if t < settings.transmittance_min {
                    break;
                }
            }
            let p = y * w + x;
            for ch in 0..3 {
                image[3 * p + ch] = c[ch] + t * settings.background[ch];
            }
            alpha[p] = 1.0 - t;
        }
    }
    (image, alpha)
}

/// Gaussians scattered in front of a camera at the origin looking down `+z`.
pub fn random_gaussians(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Gaussian> {
    (0..n)
        .map(|_| {
            let mean = Vector3::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(2.0..5.0),
            );
            let color = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
            let mut g = Gaussian::new(mean, color, 1.0, rng.random_range(0.2..0.95));
            g.log_scale = Vector3::from_fn(|_, _| rng.random_range(0.05f64..0.4).ln());
            g.rotation = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            g.normalize_rotation();
            g
        })
        .collect()
}

pub fn front_camera(size: u32, focal: f64) -> Camera {
    Camera::look_at(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), focal, size, size)
}

/// Object ids ranked by cosine similarity to `query`, ties toward the lower id, computed
/// directly from the definition.
pub fn brute_force_ranking(objects: &[(u32, Vec<f32>)], query: &[f32]) -> Vec<u32> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, u32)> = objects
        .iter()
        .map(|(id, e)| {
            let dot: f64 = e.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            (dot / (norm(e) * norm(query)), *id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}
