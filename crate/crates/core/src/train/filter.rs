use serde::{Deserialize, Serialize};

use crate::model::{Granularity, Mask, SceneModel};
use crate::render::{gaussians_at, object_members, render, RenderSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewIou {
    pub object_id: u32,
    pub frame: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Newly flagged `(object, view)` pairs.
    pub flagged: Vec<ViewIou>,
    pub evaluated: usize,
    /// Objects whose every view is now flagged.
    pub all_views_partial: Vec<u32>,
}

/// Binary mask of pixels whose accumulated alpha exceeds one half.
pub fn alpha_mask(alpha: &[f64], width: u32, height: u32) -> Mask {
    let mut m = Mask::new(width, height);
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.5 {
            m.set_index(i, true);
        }
    }
    m
}

/// Render every registered object in every view that has a mask frame, compare the
/// binarized render with the mask and flag views whose IoU falls below `iou_threshold`.
/// Views where both render and mask are empty are skipped. Flags are only ever added.
pub fn filter_partial_masks(scene: &mut SceneModel, iou_threshold: f64) -> FilterReport {
    let mut report = FilterReport::default();
    let settings = RenderSettings {
        background: [0.0; 3],
        ..scene.config.render
    };
    let mut flags = Vec::new();
    for level in Granularity::ALL {
        let objects: Vec<u32> = scene
            .sets(level)
            .filter(|s| !s.gaussian_indices.is_empty())
            .map(|s| s.object_id)
            .collect();
        for cam in scene.cameras.iter().filter(|c| c.frame < scene.masks.frame_count()) {
            let gaussians = gaussians_at(scene, cam.time);
            for &id in &objects {
                let members = object_members(scene, id, level).expect("listed from the registry");
                let out = render(&gaussians, Some(&members), cam, &settings);
                let rendered = alpha_mask(out.alpha(), cam.width, cam.height);
                let mask = scene.masks.mask(cam.frame, level, id);
                if rendered.is_empty() && mask.is_empty() {
                    continue;
                }
                report.evaluated += 1;
                let iou = rendered.iou(&mask);
                if iou < iou_threshold {
                    flags.push(ViewIou {
                        object_id: id,
                        frame: cam.frame,
                        iou,
                    });
                }
            }
        }
    }
    for f in &flags {
        if !scene.masks.is_partial(f.object_id, f.frame) {
            scene.masks.flag_partial(f.object_id, f.frame);
            report.flagged.push(f.clone());
        }
    }
    for set in &scene.object_sets {
        let frames = scene.masks.frames_of(set.object_id);
        if !frames.is_empty() && frames.iter().all(|&f| scene.masks.is_partial(set.object_id, f)) {
            log::warn!(
                "every view of object {} is flagged partial; its embedding will use all views",
                set.object_id
            );
            report.all_views_partial.push(set.object_id);
        }
    }
    report
}
