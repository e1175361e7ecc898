//! Staged reconstruction with per-object supervision.

mod adam;
mod config;
mod densify;
mod filter;
pub mod loss;

pub use adam::Adam;
pub use config::{AdamConfig, DensifyConfig, LearningRates, StageOrder, TrainConfig};
pub use densify::{densify_and_prune, DensifyReport, DensifyStats};
pub use filter::{alpha_mask, filter_partial_masks, FilterReport, ViewIou};
pub use loss::{l1, object_loss, render_loss, ssim, LossGrad};

use std::borrow::Cow;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr;
use crate::model::{Granularity, Mask, SceneModel, BACKGROUND, PARAMS_PER_GAUSSIAN};
use crate::render::{render, render_backward, DeformationField, RenderSettings};

/// Uniform sample of `m` ids without replacement; all of them when there are at most `m`.
pub fn sample_ids(rng: &mut impl Rng, ids: &[u32], m: usize) -> Vec<u32> {
    if ids.len() <= m {
        return ids.to_vec();
    }
    index::sample(rng, ids.len(), m).into_iter().map(|i| ids[i]).collect()
}

/// Objects sampled for the object loss at each active level. Only non-background sets
/// that own Gaussians take part.
pub fn sample_objects(
    rng: &mut impl Rng,
    scene: &SceneModel,
    levels: &[Granularity],
    m: usize,
) -> Vec<(Granularity, Vec<u32>)> {
    levels
        .iter()
        .map(|&level| {
            let ids: Vec<u32> = scene
                .sets(level)
                .filter(|s| !s.gaussian_indices.is_empty())
                .map(|s| s.object_id)
                .collect();
            (level, sample_ids(rng, &ids, m))
        })
        .collect()
}

/// Sum of the per-level object losses active at `iteration`; inactive or unsampled levels
/// contribute nothing.
pub fn staged_object_loss(config: &TrainConfig, iteration: usize, per_level: &[Option<f64>; 3]) -> f64 {
    config
        .active_levels(iteration)
        .into_iter()
        .filter_map(|level| per_level[level.index()])
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub l_render: f64,
    /// Mean sampled object loss per level, in `Granularity::index` order.
    pub l_obj: [Option<f64>; 3],
    /// Object loss of the background set, when enabled.
    pub l_background: Option<f64>,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<MetricsRow>,
    pub filter: Option<FilterReport>,
    pub densify: Vec<(usize, DensifyReport)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,l_render,l_obj_small,l_obj_middle,l_obj_large,psnr\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                r.l_render,
                opt(r.l_obj[0]),
                opt(r.l_obj[1]),
                opt(r.l_obj[2]),
                opt(r.psnr)
            );
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub filter: Option<FilterReport>,
    pub densify: Option<DensifyReport>,
}

/// Radius of the camera centers around their mean, padded by 10%.
pub fn scene_extent(scene: &SceneModel) -> f64 {
    if scene.cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = scene.cameras.iter().map(|c| c.center()).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if radius > 1e-9 {
        1.1 * radius
    } else {
        1.0
    }
}

pub struct Trainer {
    scene: SceneModel,
    images: Vec<Image>,
    rng: ChaCha8Rng,
    adam: Adam,
    stats: DensifyStats,
    extent: f64,
    iteration: usize,
    log: TrainLog,
}

impl Trainer {
    /// `images[i]` is the ground truth seen by `scene.cameras[i]`.
    /// A deformation field is created (seeded from the scene) when the config asks for one
    /// and the scene has none yet.
    pub fn new(mut scene: SceneModel, images: Vec<Image>) -> Result<Self> {
        if scene.cameras.is_empty() {
            return Err(Error::NoCameras);
        }
        if images.len() != scene.cameras.len() {
            return Err(Error::Invalid(format!(
                "{} images for {} cameras",
                images.len(),
                scene.cameras.len()
            )));
        }
        for (cam, img) in scene.cameras.iter().zip(&images) {
            if (cam.width, cam.height) != (img.width, img.height) {
                return Err(Error::ResolutionMismatch {
                    expected: (cam.width, cam.height),
                    found: (img.width, img.height),
                    context: format!("image of frame {}", cam.frame),
                });
            }
        }
        let problems = scene.config.validate();
        if !problems.is_empty() {
            return Err(Error::Invalid(problems.join("; ")));
        }
        if let (Some(cfg), None) = (&scene.config.deformation, &scene.deformation) {
            let mut field_rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
            field_rng.set_stream(2);
            scene.deformation = Some(DeformationField::new(*cfg, &mut field_rng));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
        rng.set_stream(1);
        let field_params = scene.deformation.as_ref().map_or(0, |f| f.params.len());
        Ok(Trainer {
            adam: Adam::new(scene.gaussians.len(), field_params),
            stats: DensifyStats::new(scene.gaussians.len()),
            extent: scene_extent(&scene),
            scene,
            images,
            rng,
            iteration: 0,
            log: TrainLog::default(),
        })
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.scene.config.iterations
    }

    pub fn into_parts(self) -> (SceneModel, TrainLog) {
        (self.scene, self.log)
    }

    pub fn run(mut self) -> Result<(SceneModel, TrainLog)> {
        while !self.finished() {
            self.step()?;
        }
        Ok(self.into_parts())
    }

    /// One optimization iteration.
    pub fn step(&mut self) -> Result<StepReport> {
        let it = self.iteration;
        let config = self.scene.config.clone();
        let mut report = StepReport::default();

        if config.partial_filter && it == config.filter_start() {
            let r = filter_partial_masks(&mut self.scene, config.partial_iou);
            log::info!("iteration {it}: flagged {} partial views", r.flagged.len());
            self.log.filter = Some(r.clone());
            report.filter = Some(r);
        }

        let cam_index = if config.time_warmup_fraction > 0.0 {
            let times = self.scene.cameras.iter().map(|c| c.time);
            let first = times.clone().fold(f64::INFINITY, f64::min);
            let last = times.fold(f64::NEG_INFINITY, f64::max);
            let horizon = config.time_horizon(it, first, last);
            let eligible: Vec<usize> = (0..self.scene.cameras.len())
                .filter(|&i| self.scene.cameras[i].time <= horizon)
                .collect();
            eligible[self.rng.random_range(0..eligible.len())]
        } else {
            self.rng.random_range(0..self.scene.cameras.len())
        };
        let camera = self.scene.cameras[cam_index].clone();
        let target = &self.images[cam_index];
        let n = self.scene.gaussians.len();

        let (deformed, cache) = match &self.scene.deformation {
            Some(field) => {
                let (g, c) = field.apply(&self.scene.gaussians, camera.time);
                (Cow::Owned(g), Some(c))
            }
            None => (Cow::Borrowed(self.scene.gaussians.as_slice()), None),
        };

        let full = render(&deformed, None, &camera, &config.render);
        let lr = render_loss(full.image(), target, config.dssim_weight)?;
        let mut d_render = vec![[0.0; PARAMS_PER_GAUSSIAN]; n];
        let screen = render_backward(&deformed, &camera, &config.render, &full, &lr.grad, &mut d_render);
        self.stats.record(&screen, camera.width, camera.height);

        let object_settings = RenderSettings {
            background: [0.0; 3],
            ..config.render
        };
        let mut d_obj = vec![[0.0; PARAMS_PER_GAUSSIAN]; n];
        let mut l_obj = [None; 3];
        if config.objects_per_level > 0 {
            let levels = config.active_levels(it);
            let sampled = sample_objects(&mut self.rng, &self.scene, &levels, config.objects_per_level);
            for (level, ids) in sampled {
                let ids: Vec<u32> = ids
                    .into_iter()
                    .filter(|&id| !self.scene.masks.is_partial(id, camera.frame))
                    .collect();
                if ids.is_empty() || camera.frame >= self.scene.masks.frame_count() {
                    continue;
                }
                let weight = 1.0 / ids.len() as f64;
                let mut total = 0.0;
                for id in ids {
                    let members = &self.scene.object_set(id).expect("sampled from registry").gaussian_indices;
                    let out = render(&deformed, Some(members), &camera, &object_settings);
                    let mask = self.scene.masks.mask(camera.frame, level, id);
                    let lg = object_loss(out.image(), target, &mask)?;
                    total += lg.value;
                    let grad: Vec<f64> = lg.grad.iter().map(|g| g * weight).collect();
                    render_backward(&deformed, &camera, &object_settings, &out, &grad, &mut d_obj);
                }
                l_obj[level.index()] = Some(total * weight);
            }
        }

        let mut l_background = None;
        if config.background_object_loss && camera.frame < self.scene.masks.frame_count() {
            let members: Vec<usize> = (0..n).filter(|&i| self.scene.gaussians[i].ids.is_background()).collect();
            if !members.is_empty() {
                let maps = &self.scene.masks.frames[camera.frame];
                let mask = Mask::from_fn(camera.width, camera.height, |x, y| {
                    maps.iter().all(|m| m.get(x, y) == BACKGROUND)
                });
                let out = render(&deformed, Some(&members), &camera, &object_settings);
                let lg = object_loss(out.image(), target, &mask)?;
                render_backward(&deformed, &camera, &object_settings, &out, &lg.grad, &mut d_obj);
                l_background = Some(lg.value);
            }
        }

        let total = lr.value + l_obj.iter().flatten().sum::<f64>() + l_background.unwrap_or(0.0);
        if !total.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }

        let mut grads = vec![[0.0; PARAMS_PER_GAUSSIAN]; n];
        let mut field_grads = None;
        match (&self.scene.deformation, &cache) {
            (Some(field), Some(cache)) => {
                let mut dp = vec![0.0; field.params.len()];
                field.backward(&self.scene.gaussians, cache, &d_render, &mut grads, Some(&mut dp));
                let obj_params = if config.freeze_deformation_for_objects {
                    None
                } else {
                    Some(dp.as_mut_slice())
                };
                field.backward(&self.scene.gaussians, cache, &d_obj, &mut grads, obj_params);
                field_grads = Some(dp);
            }
            _ => {
                for i in 0..n {
                    for k in 0..PARAMS_PER_GAUSSIAN {
                        grads[i][k] = d_render[i][k] + d_obj[i][k];
                    }
                }
            }
        }
        drop(deformed);

        let rates = &config.lr;
        let pos = rates.position_at(it, config.iterations) * self.extent;
        let mut slot_lr = [0.0; PARAMS_PER_GAUSSIAN];
        slot_lr[0..3].fill(pos);
        slot_lr[3..7].fill(rates.rotation);
        slot_lr[7..10].fill(rates.scale);
        slot_lr[10] = rates.opacity;
        slot_lr[11..14].fill(rates.color);
        self.adam.begin_step();
        self.adam
            .update_gaussians(&config.adam, &mut self.scene.gaussians, &grads, &slot_lr);
        if let (Some(field), Some(dp)) = (self.scene.deformation.as_mut(), field_grads) {
            self.adam
                .update_field(&config.adam, &mut field.params, &dp, rates.deformation);
        }

        let done = it + 1;
        if config.densify_active(done) {
            let (origin, r) = densify_and_prune(
                &mut self.scene,
                &self.stats,
                &config.densify,
                self.extent,
                &mut self.rng,
            );
            self.adam.remap(&origin);
            self.stats.reset(self.scene.gaussians.len());
            self.log.densify.push((done, r));
            report.densify = Some(r);
        }

        let psnr_now = (config.psnr_interval > 0 && done % config.psnr_interval == 0)
            .then(|| psnr(full.image(), target))
            .transpose()?;
        self.log.rows.push(MetricsRow {
            iteration: done,
            l_render: lr.value,
            l_obj,
            l_background,
            psnr: psnr_now,
        });
        self.iteration = done;
        Ok(report)
    }
}

/// Train `scene` against `images` for `scene.config.iterations` steps.
pub fn train(scene: SceneModel, images: Vec<Image>) -> Result<(SceneModel, TrainLog)> {
    Trainer::new(scene, images)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_sample_to_available() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_ids(&mut rng, &[4, 9], 3), vec![4, 9]);
        let s = sample_ids(&mut rng, &(0..10).collect::<Vec<_>>(), 3);
        assert_eq!(s.len(), 3);
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);
    }

    #[test]
    fn staged_sum_respects_stage() {
        let c = TrainConfig::default();
        let l = [Some(1.0), Some(2.0), Some(4.0)];
        assert_eq!(staged_object_loss(&c, 0, &l), 1.0);
        assert_eq!(staged_object_loss(&c, 5_000, &l), 3.0);
        assert_eq!(staged_object_loss(&c, 12_000, &l), 7.0);
    }
}
