//! Deterministic synthetic scenes with exact ground truth: images, per-granularity id maps,
//! point clouds, mock embeddings and a scripted tracker-output sequence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::image::Image;
use crate::init::InitConfig;
use crate::io::{self, Point, SceneConfig};
use crate::metrics::TrackSet;
use crate::model::{quat_from_axis_angle, Camera, Gaussian, Granularity, Mask, ObjectIds, SceneModel, TrackedMasks};
use crate::render::{render, render_id_map, DeformConfig, RenderSettings};
use crate::semantics::{one_hot, EmbeddingProvider, MockProvider, Prompt};
use crate::tracking::{RawFrame, RawMask, RawMaskSequence, TrackingConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    /// Ground-truth Gaussians (positions at time 0 for dynamic scenes).
    pub gaussians: Vec<Gaussian>,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    /// Ground-truth id maps; frame `i` belongs to `cameras[i]`.
    pub masks: TrackedMasks,
    pub points: Vec<Point>,
    pub provider: MockProvider,
    pub prompts: Vec<Prompt>,
    pub init: InitConfig,
    pub train: TrainConfig,
    /// Per Gaussian, world velocity (dynamic scenes only).
    pub velocities: Option<Vec<Vector3<f64>>>,
    pub seed: u64,
}

impl SyntheticScene {
    /// Cameras, images and masks of the listed frames, renumbered from zero.
    pub fn select_frames(&self, frames: &[usize]) -> (Vec<Camera>, Vec<Image>, TrackedMasks) {
        let mut masks = TrackedMasks::new(self.masks.width, self.masks.height, frames.len());
        let mut cameras = Vec::with_capacity(frames.len());
        let mut images = Vec::with_capacity(frames.len());
        for (k, &f) in frames.iter().enumerate() {
            let cam = &self.cameras[f];
            cameras.push(cam.clone().with_frame(k, cam.time));
            images.push(self.images[f].clone());
            masks.frames[k] = self.masks.frames[f].clone();
        }
        masks.rebuild_registry();
        (cameras, images, masks)
    }

    /// A scene model holding the ground-truth Gaussians, with each object's mock
    /// embedding attached. Stands in for a trained checkpoint when only retrieval,
    /// rendering or export is under test.
    pub fn ground_truth_model(&self) -> SceneModel {
        let mut scene = SceneModel::new(self.gaussians.clone(), self.cameras.clone(), self.masks.clone());
        scene.config = self.train.clone();
        scene.rng_seed = self.seed;
        for set in &mut scene.object_sets {
            if let Some(&axis) = self.provider.object_axes.get(&set.object_id) {
                set.embedding = Some(one_hot(axis, self.provider.dimension));
            }
        }
        scene
    }
}

struct Blob {
    center: Vector3<f64>,
    color: [f64; 3],
    ids: ObjectIds,
}

fn blob_gaussians(rng: &mut ChaCha8Rng, blob: &Blob, count: usize, radius: f64) -> Vec<Gaussian> {
    (0..count)
        .map(|_| {
            let offset = loop {
                let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                if v.norm() <= 1.0 {
                    break v * radius;
                }
            };
            let color = Vector3::from_fn(|i, _| (blob.color[i] + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0));
            let mut g = Gaussian::new(blob.center + offset, color, 1.0, 0.95).with_ids(blob.ids);
            g.log_scale = Vector3::from_fn(|_, _| rng.random_range(0.05f64..0.085).ln());
            let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            g.rotation = if axis.norm() > 1e-3 {
                quat_from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI))
            } else {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            g
        })
        .collect()
}

/// Camera at `distance` from `target`, rotated by `yaw` about the vertical axis and by
/// `pitch` upward, starting from the `-z` side.
pub fn orbit_camera(target: Vector3<f64>, distance: f64, yaw: f64, pitch: f64, focal: f64, size: u32) -> Camera {
    let dir = Vector3::new(yaw.sin() * pitch.cos(), pitch.sin(), -yaw.cos() * pitch.cos());
    Camera::look_at(target + dir * distance, target, focal, size, size)
}

/// Ground-truth images and id maps for every camera (frame `i` = camera `i`).
pub fn render_ground_truth(
    gaussians_at: impl Fn(f64) -> Vec<Gaussian>,
    cameras: &[Camera],
    settings: &RenderSettings,
) -> (Vec<Image>, TrackedMasks) {
    let (w, h) = (cameras[0].width, cameras[0].height);
    let mut masks = TrackedMasks::new(w, h, cameras.len());
    let mut images = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let g = gaussians_at(cam.time);
        images.push(render(&g, None, cam, settings).raster.image);
        for level in Granularity::ALL {
            *masks.id_map_mut(i, level) = render_id_map(&g, cam, level, settings);
        }
    }
    masks.rebuild_registry();
    (images, masks)
}

/// Jittered copies of the Gaussian centers and colors, as a structure-from-motion import.
pub fn jittered_points(gaussians: &[Gaussian], rng: &mut ChaCha8Rng, position_sigma: f64, color_sigma: f64) -> Vec<Point> {
    let pn = Normal::new(0.0, position_sigma).expect("valid sigma");
    let cn = Normal::new(0.0, color_sigma).expect("valid sigma");
    gaussians
        .iter()
        .map(|g| Point {
            position: g.mean + Vector3::from_fn(|_, _| pn.sample(rng)),
            color: [0, 1, 2].map(|c| (g.color[c] + cn.sample(rng)).clamp(0.0, 1.0)),
        })
        .collect()
}

/// One track per object, taken from id maps (a perfect tracker).
pub fn raw_from_tracked(masks: &TrackedMasks) -> RawMaskSequence {
    let mut seq = RawMaskSequence {
        width: masks.width,
        height: masks.height,
        ..Default::default()
    };
    for f in 0..masks.frame_count() {
        let mut frame = RawFrame::default();
        for level in Granularity::ALL {
            let map = masks.id_map(f, level);
            frame.levels[level.index()] = map
                .object_ids()
                .into_iter()
                .map(|id| RawMask {
                    track_id: id,
                    mask: map.mask_of(id),
                })
                .collect();
        }
        seq.frames.push(frame);
    }
    seq
}

/// Densification cap used by the synthetic training configs.
pub const SYNTHETIC_GAUSSIAN_CAP: usize = 400;

pub const LARGE: u32 = 1;
pub const MIDDLE_LEFT: u32 = 2;
pub const MIDDLE_RIGHT: u32 = 3;
pub const SMALL_RED: u32 = 4;
pub const SMALL_GREEN: u32 = 5;
pub const SMALL_BLUE: u32 = 6;

fn nested_provider() -> (MockProvider, Vec<Prompt>) {
    let objects = [
        (SMALL_RED, Granularity::Small, "red blob"),
        (SMALL_GREEN, Granularity::Small, "green blob"),
        (SMALL_BLUE, Granularity::Small, "blue blob"),
        (MIDDLE_LEFT, Granularity::Middle, "left pair"),
        (MIDDLE_RIGHT, Granularity::Middle, "right group"),
        (LARGE, Granularity::Large, "whole arrangement"),
    ];
    let mut provider = MockProvider::hashed(8);
    let mut prompts = Vec::new();
    for (axis, (id, level, text)) in objects.into_iter().enumerate() {
        provider.object_axes.insert(id, axis);
        provider.prompt_axes.insert(text.to_string(), axis);
        prompts.push(Prompt {
            text: text.to_string(),
            granularity: level,
            object_id: id,
        });
    }
    (provider, prompts)
}

/// Three small blobs (red, green, blue); red and green form one middle object, blue the
/// other, and all three one large object. Twelve 64x64 views on a ±35° arc.
pub fn nested_scene(seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = [
        Blob {
            center: Vector3::new(-0.75, 0.15, 0.0),
            color: [0.85, 0.25, 0.2],
            ids: ObjectIds::new(LARGE, MIDDLE_LEFT, SMALL_RED),
        },
        Blob {
            center: Vector3::new(-0.3, -0.15, 0.1),
            color: [0.25, 0.8, 0.3],
            ids: ObjectIds::new(LARGE, MIDDLE_LEFT, SMALL_GREEN),
        },
        Blob {
            center: Vector3::new(0.6, 0.0, -0.05),
            color: [0.2, 0.35, 0.9],
            ids: ObjectIds::new(LARGE, MIDDLE_RIGHT, SMALL_BLUE),
        },
    ];
    let gaussians: Vec<Gaussian> = blobs.iter().flat_map(|b| blob_gaussians(&mut rng, b, 13, 0.13)).collect();
    let cameras: Vec<Camera> = (0..12)
        .map(|i| {
            let yaw = (-35.0 + 70.0 * i as f64 / 11.0).to_radians();
            let pitch = if i % 2 == 0 { 10f64 } else { -8.0 }.to_radians();
            orbit_camera(Vector3::zeros(), 3.5, yaw, pitch, 80.0, 64).with_frame(i, 0.0)
        })
        .collect();
    let settings = RenderSettings::default();
    let (images, masks) = render_ground_truth(|_| gaussians.clone(), &cameras, &settings);
    let points = jittered_points(&gaussians, &mut rng, 0.02, 0.05);
    let (provider, prompts) = nested_provider();
    let mut train = TrainConfig::scaled(3000);
    train.densify.max_gaussians = Some(SYNTHETIC_GAUSSIAN_CAP);
    let init = InitConfig {
        random_per_object: 100,
        background_count: 20,
        ..InitConfig::default()
    };
    SyntheticScene {
        gaussians,
        cameras,
        images,
        masks,
        points,
        provider,
        prompts,
        init,
        train,
        velocities: None,
        seed,
    }
}

pub const STATIC_SMALL: u32 = 3;
pub const MOVING_SMALL: u32 = 6;

/// Fixed viewpoints filming the dynamic scene.
pub const DYNAMIC_VIEWS: usize = 3;

/// A static blob above a blob translating one unit along `x` over `t` in `[0, 1]`, filmed
/// by three fixed cameras at each of `steps` evenly spaced times. Frame `k` is camera
/// `k % 3` at time step `k / 3`. Gaussian positions are at `t = 0`.
pub fn dynamic_scene(seed: u64, steps: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = [
        Blob {
            center: Vector3::new(0.0, 0.4, 0.0),
            color: [0.9, 0.75, 0.2],
            ids: ObjectIds::new(1, 2, STATIC_SMALL),
        },
        Blob {
            center: Vector3::new(-0.5, -0.3, 0.0),
            color: [0.2, 0.6, 0.9],
            ids: ObjectIds::new(4, 5, MOVING_SMALL),
        },
    ];
    let gaussians: Vec<Gaussian> = blobs.iter().flat_map(|b| blob_gaussians(&mut rng, b, 12, 0.12)).collect();
    let velocities: Vec<Vector3<f64>> = gaussians
        .iter()
        .map(|g| {
            if g.ids.small == MOVING_SMALL {
                Vector3::new(1.0, 0.0, 0.0)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let last = (steps - 1).max(1) as f64;
    let cameras: Vec<Camera> = (0..steps * DYNAMIC_VIEWS)
        .map(|k| {
            let t = (k / DYNAMIC_VIEWS) as f64 / last;
            let yaw = [-30f64, 0.0, 30.0][k % DYNAMIC_VIEWS].to_radians();
            let pitch = [8f64, -6.0, 8.0][k % DYNAMIC_VIEWS].to_radians();
            orbit_camera(Vector3::zeros(), 3.5, yaw, pitch, 80.0, 64).with_frame(k, t)
        })
        .collect();
    let settings = RenderSettings::default();
    let moved = |t: f64| -> Vec<Gaussian> {
        gaussians
            .iter()
            .zip(&velocities)
            .map(|(g, v)| {
                let mut g = g.clone();
                g.mean += v * t;
                g
            })
            .collect()
    };
    let (images, masks) = render_ground_truth(moved, &cameras, &settings);
    let points = jittered_points(&gaussians, &mut rng, 0.02, 0.05);
    let mut provider = MockProvider::hashed(8);
    provider.object_axes.insert(STATIC_SMALL, 0);
    provider.object_axes.insert(MOVING_SMALL, 1);
    provider.prompt_axes.insert("still blob".into(), 0);
    provider.prompt_axes.insert("moving blob".into(), 1);
    let prompts = vec![
        Prompt {
            text: "still blob".into(),
            granularity: Granularity::Small,
            object_id: STATIC_SMALL,
        },
        Prompt {
            text: "moving blob".into(),
            granularity: Granularity::Small,
            object_id: MOVING_SMALL,
        },
    ];
    let mut train = TrainConfig {
        deformation: Some(DeformConfig {
            position_frequencies: 2,
            time_frequencies: 2,
            hidden_width: 32,
            hidden_layers: 3,
        }),
        time_warmup_fraction: 0.5,
        ..TrainConfig::scaled(3000)
    };
    train.lr.deformation = 1e-3;
    train.densify.max_gaussians = Some(SYNTHETIC_GAUSSIAN_CAP);
    let init = InitConfig {
        random_per_object: 100,
        background_count: 20,
        max_vote_time: Some(0.1),
        ..InitConfig::default()
    };
    SyntheticScene {
        gaussians,
        cameras,
        images,
        masks,
        points,
        provider,
        prompts,
        init,
        train,
        velocities: Some(velocities),
        seed,
    }
}

/// Scripted tracker output over a 20-frame camera path, with its ground truth.
#[derive(Clone, Debug)]
pub struct TrackingFixture {
    pub raw: RawMaskSequence,
    /// Small-level ground truth: object -> frame -> mask.
    pub ground_truth: TrackSet,
    pub gaussians: Vec<Gaussian>,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub points: Vec<Point>,
    pub config: TrackingConfig,
    pub init: InitConfig,
}

pub const TRACK_A: u32 = 1;
pub const TRACK_A_DUPLICATE: u32 = 2;
pub const TRACK_B: u32 = 3;

/// Three objects A (center), B (left) and C (right). The camera frames A and B for frames
/// 0-7, zooms onto A alone for 8-11 and pulls back to show all three from 12 on.
///
/// The scripted tracker follows A throughout, also reports a near-copy of A as a second
/// track, loses B after frame 7 and never picks up C. Fresh segmentations exist at every
/// detection frame, with candidate propagations for every later frame.
pub fn tracking_fixture() -> TrackingFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b, c) = (10u32, 20u32, 30u32);
    let blobs = [
        Blob {
            center: Vector3::new(0.0, 0.0, 0.0),
            color: [0.85, 0.3, 0.25],
            ids: ObjectIds::new(0, 0, a),
        },
        Blob {
            center: Vector3::new(-0.8, 0.05, 0.1),
            color: [0.3, 0.8, 0.35],
            ids: ObjectIds::new(0, 0, b),
        },
        Blob {
            center: Vector3::new(1.1, -0.05, -0.1),
            color: [0.25, 0.4, 0.9],
            ids: ObjectIds::new(0, 0, c),
        },
    ];
    let gaussians: Vec<Gaussian> = blobs.iter().flat_map(|bl| blob_gaussians(&mut rng, bl, 12, 0.13)).collect();
    let cameras: Vec<Camera> = (0..20)
        .map(|i| {
            let swing = ((i % 4) as f64 - 1.5) * 7.0;
            let (target, distance, focal) = match i {
                0..=7 => (Vector3::new(-0.5, 0.0, 0.0), 3.0, 90.0),
                8..=11 => (Vector3::new(0.0, 0.0, 0.0), 1.5, 110.0),
                _ => (Vector3::new(0.15, 0.0, 0.0), 4.5, 64.0),
            };
            let yaw = (swing + if i >= 12 { ((i - 12) as f64 - 3.5) * 4.0 } else { 0.0 }).to_radians();
            let pitch = if i % 2 == 0 { 5f64 } else { -5.0 }.to_radians();
            orbit_camera(target, distance, yaw, pitch, focal, 64).with_frame(i, 0.0)
        })
        .collect();
    let settings = RenderSettings::default();
    let (images, gt_masks) = render_ground_truth(|_| gaussians.clone(), &cameras, &settings);
    let mut ground_truth = TrackSet::new();
    for f in 0..20 {
        let map = gt_masks.id_map(f, Granularity::Small);
        for id in map.object_ids() {
            ground_truth.entry(id).or_default().insert(f, map.mask_of(id));
        }
    }

    let (w, h) = (gt_masks.width, gt_masks.height);
    let gt = |id: u32, f: usize| ground_truth.get(&id).and_then(|t| t.get(&f)).cloned();
    let mut raw = RawMaskSequence {
        width: w,
        height: h,
        ..Default::default()
    };
    for f in 0..20 {
        let mut small = Vec::new();
        if let Some(m) = gt(a, f) {
            small.push(RawMask {
                track_id: TRACK_A_DUPLICATE,
                mask: without_bottom_row(&m),
            });
            small.push(RawMask { track_id: TRACK_A, mask: m });
        }
        if f <= 7 {
            if let Some(m) = gt(b, f) {
                small.push(RawMask { track_id: TRACK_B, mask: m });
            }
        }
        let mut frame = RawFrame::default();
        frame.levels[Granularity::Small.index()] = small;
        raw.frames.push(frame);
    }
    let config = TrackingConfig {
        detect_interval: 4,
        ..TrackingConfig::default()
    };
    for f in (config.detect_interval..20).step_by(config.detect_interval) {
        let mut frame = RawFrame::default();
        for (k, id) in [a, b, c].into_iter().enumerate() {
            let candidate = 100 + 10 * f as u32 + k as u32;
            if let Some(m) = gt(id, f) {
                frame.levels[Granularity::Small.index()].push(RawMask {
                    track_id: candidate,
                    mask: m,
                });
                let later: BTreeMap<usize, Mask> = (f..20).filter_map(|g| gt(id, g).map(|m| (g, m))).collect();
                raw.candidates.insert(candidate, later);
            }
        }
        raw.resegmentations.insert(f, frame);
    }
    let points = jittered_points(&gaussians, &mut rng, 0.02, 0.05);
    let init = InitConfig {
        random_per_object: 100,
        background_count: 0,
        ..InitConfig::default()
    };
    TrackingFixture {
        raw,
        ground_truth,
        gaussians,
        cameras,
        images,
        points,
        config,
        init,
    }
}

fn without_bottom_row(m: &Mask) -> Mask {
    let bottom = m.indices().map(|i| i as u32 / m.width()).max().unwrap_or(0);
    let mut out = m.clone();
    for x in 0..m.width() {
        out.set(x, bottom, false);
    }
    out
}

/// Lay a synthetic scene out on disk: `cameras.json`, `images/`, raw masks (`masks/`),
/// ground-truth id maps (`gt_masks/`), `points.ply`, `embeddings.bin`, `prompts.json`
/// (prompt -> vector), `eval_prompts.json` and a `scene.json` tying them together.
pub fn write_scene(dir: impl AsRef<Path>, scene: &SyntheticScene) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut cameras = scene.cameras.clone();
    for (i, (cam, img)) in cameras.iter_mut().zip(&scene.images).enumerate() {
        let name = format!("images/frame_{i:05}.png");
        img.save_png(dir.join(&name))?;
        cam.image = Some(name);
    }
    io::write_cameras(dir.join("cameras.json"), &cameras)?;
    io::write_raw_masks_png(dir.join("masks"), &raw_from_tracked(&scene.masks))?;
    io::write_tracked_masks(dir.join("gt_masks"), &scene.masks)?;
    io::write_point_cloud(dir.join("points.ply"), &scene.points)?;
    scene.provider.view_table(&scene.masks)?.save(dir.join("embeddings.bin"))?;
    let prompt_vectors: BTreeMap<String, Vec<f32>> = scene
        .prompts
        .iter()
        .map(|p| Ok((p.text.clone(), scene.provider.embed_text(&p.text)?)))
        .collect::<Result<_>>()?;
    io::write_json(dir.join("prompts.json"), &prompt_vectors)?;
    io::write_json(dir.join("eval_prompts.json"), &scene.prompts)?;
    let config = SceneConfig {
        cameras: "cameras.json".into(),
        masks: "masks".into(),
        tracked_masks: None,
        point_cloud: "points.ply".into(),
        embeddings: Some("embeddings.bin".into()),
        seed: scene.seed,
        tracking: TrackingConfig::default(),
        init: scene.init.clone(),
        train: scene.train.clone(),
    };
    let path = dir.join("scene.json");
    io::write_json(&path, &config)?;
    Ok(path)
}

/// Write the tracking fixture: raw tracker output as RLE JSON (`raw_masks.json`, since
/// its tracks overlap), cameras, images, point cloud and a `scene.json` pointing at them.
pub fn write_tracking_fixture(dir: impl AsRef<Path>, fx: &TrackingFixture) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut cameras = fx.cameras.clone();
    for (i, (cam, img)) in cameras.iter_mut().zip(&fx.images).enumerate() {
        let name = format!("images/frame_{i:05}.png");
        img.save_png(dir.join(&name))?;
        cam.image = Some(name);
    }
    io::write_cameras(dir.join("cameras.json"), &cameras)?;
    io::write_raw_masks_rle(dir.join("raw_masks.json"), &fx.raw)?;
    io::write_point_cloud(dir.join("points.ply"), &fx.points)?;
    let config = SceneConfig {
        cameras: "cameras.json".into(),
        masks: "raw_masks.json".into(),
        tracked_masks: None,
        point_cloud: "points.ply".into(),
        embeddings: None,
        seed: 0,
        tracking: fx.config,
        init: fx.init.clone(),
        train: TrainConfig::default(),
    };
    let path = dir.join("scene.json");
    io::write_json(&path, &config)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_masks_respect_containment() {
        let s = nested_scene(3);
        for f in 0..s.masks.frame_count() {
            let small = s.masks.id_map(f, Granularity::Small);
            let middle = s.masks.id_map(f, Granularity::Middle);
            for (p, &id) in small.ids.iter().enumerate() {
                match id {
                    SMALL_RED | SMALL_GREEN => assert_eq!(middle.ids[p], MIDDLE_LEFT),
                    SMALL_BLUE => assert_eq!(middle.ids[p], MIDDLE_RIGHT),
                    _ => {}
                }
            }
            assert_eq!(small.object_ids().len(), 3, "frame {f} should see all three blobs");
        }
    }

    #[test]
    fn tracking_fixture_follows_script() {
        let fx = tracking_fixture();
        let present = |f: usize| -> Vec<u32> {
            fx.ground_truth.iter().filter(|(_, t)| t.contains_key(&f)).map(|(&id, _)| id).collect()
        };
        for f in 0..20 {
            let expected: &[u32] = match f {
                0..=7 => &[10, 20],
                8..=11 => &[10],
                _ => &[10, 20, 30],
            };
            assert_eq!(present(f), expected, "frame {f}");
        }
        for frame in &fx.raw.frames {
            let s = frame.level(Granularity::Small);
            assert!(s[0].mask.iou(&s[1].mask) > 0.8);
        }
    }
}
