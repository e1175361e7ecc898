//! End-to-end orchestration: load inputs, consolidate masks, initialize, train, attach
//! embeddings and evaluate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::init::{initialize, InitReport};
use crate::io::{self, Point, SceneConfig};
use crate::metrics::psnr;
use crate::model::{Camera, Granularity, SceneModel, TrackedMasks};
use crate::render::{gaussians_at, render, render_id_map};
use crate::semantics::{associate_all, query, EmbeddingProvider, EmbeddingTable, Prompt};
use crate::tracking::{consolidate, Consolidation};
use crate::train::{TrainLog, Trainer};

/// Load the image each camera names; paths are relative to `base`.
pub fn load_images(cameras: &[Camera], base: &Path) -> Result<Vec<Image>> {
    cameras
        .iter()
        .map(|c| {
            let name = c
                .image
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("camera of frame {} names no image", c.frame)))?;
            Image::load_png(base.join(name))
        })
        .collect()
}

/// Everything a scene config points at, with masks already consolidated.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub masks: TrackedMasks,
    pub points: Vec<Point>,
    /// Present when the raw masks were consolidated during loading.
    pub consolidation: Option<Consolidation>,
}

pub fn load_inputs(config: &SceneConfig) -> Result<Inputs> {
    let cameras = io::read_cameras(&config.cameras)?;
    let base = config.cameras.parent().unwrap_or(Path::new("."));
    let images = load_images(&cameras, base)?;
    let (masks, consolidation) = match &config.tracked_masks {
        Some(dir) => (io::read_tracked_masks(dir)?, None),
        None => {
            let c = consolidate(&io::read_raw_masks(&config.masks)?, &config.tracking)?;
            (c.masks.clone(), Some(c))
        }
    };
    if masks.frame_count() != cameras.len() {
        return Err(Error::Invalid(format!(
            "{} mask frames for {} cameras",
            masks.frame_count(),
            cameras.len()
        )));
    }
    let points = io::read_point_cloud(&config.point_cloud)?;
    Ok(Inputs {
        cameras,
        images,
        masks,
        points,
        consolidation,
    })
}

/// Initialize a scene from loaded inputs and attach the training config.
pub fn build_scene(inputs: &Inputs, config: &SceneConfig) -> Result<(SceneModel, InitReport)> {
    let (mut scene, report) = initialize(
        &inputs.points,
        &inputs.cameras,
        inputs.masks.clone(),
        Some(&inputs.images),
        &config.init,
        config.seed,
    )?;
    scene.config = config.train.clone();
    Ok((scene, report))
}

/// Train, then attach per-object embeddings from `table` when given.
pub fn train_scene(scene: SceneModel, images: Vec<Image>, table: Option<&EmbeddingTable>) -> Result<(SceneModel, TrainLog)> {
    let (mut scene, log) = Trainer::new(scene, images)?.run()?;
    if let Some(table) = table {
        let missing = associate_all(&mut scene, table);
        if !missing.is_empty() {
            log::warn!("{} objects have no embedding: {missing:?}", missing.len());
        }
    }
    Ok((scene, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub frame: usize,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEval {
    pub object_id: u32,
    pub granularity: Granularity,
    /// Mean over views where the object appears in the prediction or the ground truth.
    pub iou: f64,
    pub views: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub text: String,
    pub granularity: Granularity,
    pub expected: u32,
    pub retrieved: Option<u32>,
    pub correct: bool,
}

/// Contents of `eval_report.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    pub mean_psnr: f64,
    pub objects: Vec<ObjectEval>,
    /// Mean object IoU per granularity, for levels with ground-truth objects.
    pub mean_iou: BTreeMap<Granularity, f64>,
    pub queries: Vec<QueryEval>,
    pub query_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn set_queries(&mut self, queries: Vec<QueryEval>) {
        self.query_accuracy =
            (!queries.is_empty()).then(|| queries.iter().filter(|q| q.correct).count() as f64 / queries.len() as f64);
        self.queries = queries;
    }

    pub fn iou_of(&self, object: u32) -> Option<f64> {
        self.objects.iter().find(|o| o.object_id == object).map(|o| o.iou)
    }
}

/// Score renders and occlusion-aware object masks against ground truth. Frame `i` of
/// `gt` and `images[i]` belong to `cameras[i]`; predicted and ground-truth objects are
/// matched by id.
pub fn evaluate(scene: &SceneModel, cameras: &[Camera], images: &[Image], gt: &TrackedMasks) -> Result<EvalReport> {
    if cameras.is_empty() {
        return Err(Error::NoCameras);
    }
    if images.len() != cameras.len() || gt.frame_count() != cameras.len() {
        return Err(Error::Invalid(format!(
            "{} cameras, {} images and {} mask frames",
            cameras.len(),
            images.len(),
            gt.frame_count()
        )));
    }
    let settings = &scene.config.render;
    let mut report = EvalReport::default();
    let mut per_object: BTreeMap<(Granularity, u32), Vec<f64>> = BTreeMap::new();
    for (i, (cam, img)) in cameras.iter().zip(images).enumerate() {
        let gaussians = gaussians_at(scene, cam.time);
        let out = render(&gaussians, None, cam, settings);
        report.views.push(ViewEval {
            frame: cam.frame,
            psnr: psnr(out.image(), img)?,
        });
        for level in Granularity::ALL {
            let truth = gt.id_map(i, level);
            let pred = render_id_map(&gaussians, cam, level, settings);
            for id in truth.object_ids() {
                let (p, g) = (pred.mask_of(id), truth.mask_of(id));
                per_object.entry((level, id)).or_default().push(p.iou(&g));
            }
            for id in pred.object_ids().difference(&truth.object_ids()) {
                if gt.granularity_of(*id) == Some(level) {
                    per_object.entry((level, *id)).or_default().push(0.0);
                }
            }
        }
    }
    report.mean_psnr = report.views.iter().map(|v| v.psnr).sum::<f64>() / report.views.len() as f64;
    for ((level, id), scores) in per_object {
        report.objects.push(ObjectEval {
            object_id: id,
            granularity: level,
            iou: scores.iter().sum::<f64>() / scores.len() as f64,
            views: scores.len(),
        });
    }
    for level in Granularity::ALL {
        let scores: Vec<f64> = report.objects.iter().filter(|o| o.granularity == level).map(|o| o.iou).collect();
        if !scores.is_empty() {
            report.mean_iou.insert(level, scores.iter().sum::<f64>() / scores.len() as f64);
        }
    }
    Ok(report)
}

/// Run each prompt at its granularity and compare the top hit with the expected object.
pub fn evaluate_queries(scene: &SceneModel, prompts: &[Prompt], provider: &dyn EmbeddingProvider) -> Result<Vec<QueryEval>> {
    prompts
        .iter()
        .map(|p| {
            let text = provider.embed_text(&p.text)?;
            let retrieved = query(scene, &text, Some(p.granularity), Some(1))?.best().map(|h| h.object_id);
            Ok(QueryEval {
                text: p.text.clone(),
                granularity: p.granularity,
                expected: p.object_id,
                retrieved,
                correct: retrieved == Some(p.object_id),
            })
        })
        .collect()
}
