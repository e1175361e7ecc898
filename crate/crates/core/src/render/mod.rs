//! Differentiable Gaussian splatting: projection, tiled compositing, analytic backward
//! and the optional deformation field.

mod deform;
mod project;
mod raster;

pub use deform::{positional_encoding, DeformCache, DeformConfig, DeformationField, DEFORM_OUTPUTS};
pub use project::{project, Splat2D, SplatGrad};
pub use raster::{rasterize, rasterize_backward, Raster};

use std::borrow::Cow;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Camera, Gaussian, Granularity, IdMap, SceneModel, BACKGROUND, PARAMS_PER_GAUSSIAN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Camera-space depth below which Gaussians are culled.
    pub near: f64,
    /// Added to the projected covariance diagonal, in pixel².
    pub low_pass: f64,
    /// Contributions with a smaller alpha are skipped; also sets the splat footprint.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_min: f64,
    pub background: [f64; 3],
    pub tile_size: u32,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            near: 0.01,
            low_pass: 0.3,
            alpha_min: 1e-7,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            background: [0.0; 3],
            tile_size: 16,
        }
    }
}

/// `exp(-0.5 (x - mean)^T cov^-1 (x - mean))`.
pub fn eval_gaussian(x: &Vector3<f64>, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Result<f64> {
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    let d = x - mean;
    let y = chol.solve(&d);
    Ok((-0.5 * d.dot(&y)).exp())
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub splats: Vec<Splat2D>,
    pub raster: Raster,
}

impl RenderOutput {
    pub fn image(&self) -> &Image {
        &self.raster.image
    }

    pub fn alpha(&self) -> &[f64] {
        &self.raster.alpha
    }
}

/// Render the selected Gaussians (all when `subset` is `None`).
pub fn render(
    gaussians: &[Gaussian],
    subset: Option<&[usize]>,
    camera: &Camera,
    settings: &RenderSettings,
) -> RenderOutput {
    let splats = project(gaussians, subset, camera, settings);
    let raster = rasterize(&splats, camera.width, camera.height, settings);
    RenderOutput { splats, raster }
}

/// Add the gradient of a loss with respect to every rendered Gaussian's parameters into
/// `grads`, given `dl_dimage` for the image of `out`. Returns the pixel-space gradient of
/// each splat's 2D mean, keyed by source index.
pub fn render_backward(
    gaussians: &[Gaussian],
    camera: &Camera,
    settings: &RenderSettings,
    out: &RenderOutput,
    dl_dimage: &[f64],
    grads: &mut [[f64; PARAMS_PER_GAUSSIAN]],
) -> Vec<(usize, [f64; 2])> {
    let splat_grads = rasterize_backward(&out.splats, &out.raster, dl_dimage, settings);
    let mut screen = Vec::with_capacity(out.splats.len());
    for (s, g) in out.splats.iter().zip(&splat_grads) {
        if *g == SplatGrad::default() {
            continue;
        }
        let proj = project::project_one(&gaussians[s.source], s.source, camera, settings)
            .expect("splat was projected in the forward pass");
        project::project_backward(&proj, camera, g, &mut grads[s.source]);
        screen.push((s.source, g.mean2d));
    }
    screen
}

/// The scene's Gaussians at `time`, deformed when the scene has a field.
pub fn gaussians_at(scene: &SceneModel, time: f64) -> Cow<'_, [Gaussian]> {
    match &scene.deformation {
        Some(field) => Cow::Owned(field.apply(&scene.gaussians, time).0),
        None => Cow::Borrowed(&scene.gaussians),
    }
}

/// Indices of the Gaussians rendered for one object; `BACKGROUND` selects the Gaussians
/// that carry the background id at `level`.
pub fn object_members(scene: &SceneModel, object_id: u32, level: Granularity) -> Result<Vec<usize>> {
    if object_id == BACKGROUND {
        return Ok(scene.members(BACKGROUND, level));
    }
    match scene.object_set(object_id) {
        Some(set) if set.granularity == level => Ok(set.gaussian_indices.clone()),
        _ => Err(Error::UnknownObject(object_id)),
    }
}

pub fn render_scene(scene: &SceneModel, camera: &Camera, time: f64) -> RenderOutput {
    let gaussians = gaussians_at(scene, time);
    render(&gaussians, None, camera, &scene.config.render)
}

/// Render one object's Gaussians alone over a black background.
pub fn render_object(
    scene: &SceneModel,
    object_id: u32,
    level: Granularity,
    camera: &Camera,
    time: f64,
) -> Result<RenderOutput> {
    let members = object_members(scene, object_id, level)?;
    let gaussians = gaussians_at(scene, time);
    let settings = RenderSettings {
        background: [0.0; 3],
        ..scene.config.render
    };
    Ok(render(&gaussians, Some(&members), camera, &settings))
}

/// Full render with everything outside `object` dimmed: each pixel is scaled by
/// `dim + (1 - dim) * alpha_object`.
pub fn render_highlight(
    scene: &SceneModel,
    object_id: u32,
    level: Granularity,
    camera: &Camera,
    time: f64,
    dim: f64,
) -> Result<Image> {
    let object = render_object(scene, object_id, level, camera, time)?;
    let mut image = render_scene(scene, camera, time).raster.image;
    for (p, a) in object.alpha().iter().enumerate() {
        let k = dim + (1.0 - dim) * a;
        for c in &mut image.data[3 * p..3 * p + 3] {
            *c *= k;
        }
    }
    Ok(image)
}

/// Occlusion-aware id map: each pixel takes the object with the largest blending weight
/// when that weight reaches one half.
pub fn render_id_map(gaussians: &[Gaussian], camera: &Camera, level: Granularity, settings: &RenderSettings) -> IdMap {
    let ids: Vec<u32> = {
        let mut v: Vec<u32> = gaussians.iter().map(|g| g.ids.get(level)).filter(|&id| id != BACKGROUND).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let settings = RenderSettings {
        background: [0.0; 3],
        ..*settings
    };
    let n = camera.width as usize * camera.height as usize;
    let mut best = vec![(0.0f64, BACKGROUND); n];
    for batch in ids.chunks(3) {
        let probe: Vec<Gaussian> = gaussians
            .iter()
            .map(|g| {
                let mut p = g.clone();
                let id = g.ids.get(level);
                p.color = Vector3::from_fn(|c, _| if batch.get(c) == Some(&id) { 1.0 } else { 0.0 });
                p
            })
            .collect();
        let out = render(&probe, None, camera, &settings);
        for (p, slot) in best.iter_mut().enumerate() {
            for (c, &id) in batch.iter().enumerate() {
                let w = out.image().data[3 * p + c];
                if w > slot.0 {
                    *slot = (w, id);
                }
            }
        }
    }
    IdMap {
        width: camera.width,
        height: camera.height,
        ids: best.into_iter().map(|(w, id)| if w >= 0.5 { id } else { BACKGROUND }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_at_mean_is_one() {
        let m = Vector3::new(0.2, -1.0, 3.0);
        assert_eq!(eval_gaussian(&m, &m, &Matrix3::identity()).unwrap(), 1.0);
        let x = m + Vector3::new(1.0, 0.0, 0.0);
        let v = eval_gaussian(&x, &m, &Matrix3::identity()).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!(eval_gaussian(&x, &m, &Matrix3::zeros()).is_err());
    }

    /// World point that projects onto the center of pixel (7, 7) at the given depth.
    fn on_pixel_center(depth: f64) -> Vector3<f64> {
        Vector3::new(0.5 * depth / 40.0, 0.5 * depth / 40.0, depth - 4.0)
    }

    fn camera() -> Camera {
        Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), 40.0, 16, 16)
    }

    fn single(opacity: f64, color: [f64; 3]) -> (Gaussian, Camera) {
        let g = Gaussian::new(on_pixel_center(4.0), Vector3::from(color), 0.05, opacity);
        (g, camera())
    }

    #[test]
    fn capped_opacity_at_center() {
        let (g, cam) = single(0.999, [0.2, 0.4, 1.0]);
        let out = render(&[g], None, &cam, &RenderSettings::default());
        let c = out.image().get(7, 7);
        for (v, e) in c.iter().zip([0.2, 0.4, 1.0]) {
            assert!((v - 0.99 * e).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn two_layers_blend_front_to_back() {
        let front = Gaussian::new(on_pixel_center(3.0), Vector3::new(1.0, 0.0, 0.0), 0.05, 0.6);
        let back = Gaussian::new(on_pixel_center(4.0), Vector3::new(0.0, 0.0, 1.0), 0.05, 0.6);
        let out = render(&[back, front], None, &camera(), &RenderSettings::default());
        let c = out.image().get(7, 7);
        assert!((c[0] - 0.6).abs() < 1e-9, "{c:?}");
        assert!((c[2] - 0.24).abs() < 1e-9, "{c:?}");
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let (g, cam) = single(0.5, [0.3, 0.3, 0.3]);
        let settings = RenderSettings::default();
        let out = render(std::slice::from_ref(&g), None, &cam, &settings);
        let mut grads = vec![[0.0; PARAMS_PER_GAUSSIAN]];
        let d = vec![0.0; out.image().data.len()];
        render_backward(&[g], &cam, &settings, &out, &d, &mut grads);
        assert_eq!(grads[0], [0.0; PARAMS_PER_GAUSSIAN]);
    }

    #[test]
    fn color_gradient_of_pixel_sum_is_alpha_sum() {
        let (g, cam) = single(0.5, [0.3, 0.3, 0.3]);
        let settings = RenderSettings::default();
        let out = render(std::slice::from_ref(&g), None, &cam, &settings);
        let mut grads = vec![[0.0; PARAMS_PER_GAUSSIAN]];
        let d = vec![1.0; out.image().data.len()];
        render_backward(&[g], &cam, &settings, &out, &d, &mut grads);
        let alpha_sum: f64 = out.alpha().iter().sum();
        for k in 0..3 {
            assert!((grads[0][11 + k] - alpha_sum).abs() < 1e-9);
        }
    }
}
