//! Repair of raw tracker output into consistent per-object tracks.
//!
//! Three corrections are applied: objects that appear after the first frame are picked up
//! from periodic re-segmentations, near-duplicate tracks of one object are dropped, and
//! (later, during initialization) tracks broken by occlusion are merged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TrackSet;
use crate::model::{Granularity, IdMap, Mask, TrackedMasks};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawMask {
    pub track_id: u32,
    pub mask: Mask,
}

/// One frame of tracker output: possibly overlapping masks per granularity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawFrame {
    pub levels: [Vec<RawMask>; 3],
}

impl RawFrame {
    pub fn level(&self, level: Granularity) -> &[RawMask] {
        &self.levels[level.index()]
    }
}

/// Tracker output for a whole sequence, plus the periodic fresh segmentations and the
/// tracker's propagation of each fresh mask from its frame onward.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawMaskSequence {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<RawFrame>,
    /// Frame -> fresh segmentation; `track_id` holds a candidate id.
    pub resegmentations: BTreeMap<usize, RawFrame>,
    /// Candidate id -> frame -> propagated mask.
    pub candidates: BTreeMap<u32, BTreeMap<usize, Mask>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    /// Frames between new-object checks.
    pub detect_interval: usize,
    /// Detection runs when the segmented ratio falls below this fraction of its value
    /// `detect_interval` frames earlier.
    pub decline_threshold: f64,
    /// Fresh masks whose best IoU with every tracked mask is below this are new objects.
    pub overlap_threshold: f64,
    /// Of two masks overlapping beyond this IoU, the smaller is dropped.
    pub multi_track_iou: f64,
    pub detect_new_objects: bool,
    pub resolve_multi_tracks: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            detect_interval: 10,
            decline_threshold: 0.9,
            overlap_threshold: 0.1,
            multi_track_iou: 0.8,
            detect_new_objects: true,
            resolve_multi_tracks: true,
        }
    }
}

/// Fraction of the frame covered by the union of `masks`.
pub fn segmented_ratio<'a>(width: u32, height: u32, masks: impl IntoIterator<Item = &'a Mask>) -> Result<f64> {
    let total = width as usize * height as usize;
    if total == 0 {
        return Err(Error::EmptyFrame);
    }
    let mut union = Mask::new(width, height);
    for m in masks {
        union.union_with(m);
    }
    Ok(union.area() as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewObject {
    pub track_id: u32,
    pub candidate: u32,
    #[serde(skip)]
    pub mask: Option<Mask>,
}

/// Fresh masks that overlap no tracked mask, when coverage has declined enough since
/// `prev`. Each returned object takes the next id from `next_id`.
#[allow(clippy::too_many_arguments)]
pub fn detect_new_objects(
    width: u32,
    height: u32,
    prev: &[RawMask],
    cur: &[RawMask],
    resegmentation: &[RawMask],
    decline_threshold: f64,
    overlap_threshold: f64,
    next_id: &mut u32,
) -> Result<Vec<NewObject>> {
    let before = segmented_ratio(width, height, prev.iter().map(|m| &m.mask))?;
    let now = segmented_ratio(width, height, cur.iter().map(|m| &m.mask))?;
    let declined = before == 0.0 || now / before < decline_threshold;
    if !declined {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for fresh in resegmentation {
        if fresh.mask.is_empty() {
            continue;
        }
        let best = cur.iter().map(|t| t.mask.iou(&fresh.mask)).fold(0.0, f64::max);
        if best < overlap_threshold {
            out.push(NewObject {
                track_id: *next_id,
                candidate: fresh.track_id,
                mask: Some(fresh.mask.clone()),
            });
            *next_id += 1;
        }
    }
    Ok(out)
}

/// Drop the smaller mask of every pair overlapping beyond `iou_threshold`. Pairs are
/// visited by descending IoU, ties by smaller combined area; equal sizes drop the higher
/// track id. Surviving masks keep their input order.
pub fn resolve_multi_tracking(masks: &[RawMask], iou_threshold: f64) -> Vec<RawMask> {
    let mut pairs = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let iou = masks[i].mask.iou(&masks[j].mask);
            if iou > iou_threshold {
                let area = masks[i].mask.area() + masks[j].mask.area();
                pairs.push((iou, area, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then((a.2, a.3).cmp(&(b.2, b.3))));
    let mut alive = vec![true; masks.len()];
    for (_, _, i, j) in pairs {
        if !(alive[i] && alive[j]) {
            continue;
        }
        let (ai, aj) = (masks[i].mask.area(), masks[j].mask.area());
        let drop = match ai.cmp(&aj) {
            std::cmp::Ordering::Less => i,
            std::cmp::Ordering::Greater => j,
            std::cmp::Ordering::Equal => {
                if masks[i].track_id > masks[j].track_id {
                    i
                } else {
                    j
                }
            }
        };
        alive[drop] = false;
    }
    masks
        .iter()
        .zip(alive)
        .filter(|(_, a)| *a)
        .map(|(m, _)| m.clone())
        .collect()
}

/// Paint masks into an id map; contested pixels go to the larger mask, ties to the
/// lower id.
pub fn flatten(width: u32, height: u32, masks: &[RawMask]) -> IdMap {
    let mut order: Vec<&RawMask> = masks.iter().collect();
    order.sort_by(|a, b| b.mask.area().cmp(&a.mask.area()).then(a.track_id.cmp(&b.track_id)));
    let mut map = IdMap::new(width, height);
    for m in order {
        for i in m.mask.indices() {
            if map.ids[i] == crate::model::BACKGROUND {
                map.ids[i] = m.track_id;
            }
        }
    }
    map
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub granularity: Granularity,
    pub track_id: u32,
    pub candidate: u32,
}

#[derive(Clone, Debug)]
pub struct Consolidation {
    pub masks: TrackedMasks,
    /// Per granularity, every track's masks before they were painted into id maps.
    pub tracks: [TrackSet; 3],
    pub detections: Vec<Detection>,
}

fn check_size(raw: &RawMaskSequence, m: &Mask, context: impl FnOnce() -> String) -> Result<()> {
    if (m.width(), m.height()) != (raw.width, raw.height) {
        return Err(Error::ResolutionMismatch {
            expected: (raw.width, raw.height),
            found: (m.width(), m.height()),
            context: context(),
        });
    }
    Ok(())
}

/// Run new-object detection every `detect_interval` frames and multi-track resolution on
/// every frame, then paint the result into per-frame id maps.
pub fn consolidate(raw: &RawMaskSequence, config: &TrackingConfig) -> Result<Consolidation> {
    let mut level_of: BTreeMap<u32, Granularity> = BTreeMap::new();
    for (f, frame) in raw.frames.iter().enumerate() {
        for level in Granularity::ALL {
            for m in frame.level(level) {
                check_size(raw, &m.mask, || format!("frame {f}, {level}, track {}", m.track_id))?;
                if let Some(prev) = level_of.insert(m.track_id, level).filter(|p| *p != level) {
                    return Err(Error::Invalid(format!(
                        "track {} appears at {prev} and at {level} (frame {f}); ids must be unique across levels",
                        m.track_id
                    )));
                }
            }
        }
    }
    for (f, frame) in &raw.resegmentations {
        for m in frame.levels.iter().flatten() {
            check_size(raw, &m.mask, || format!("re-segmentation of frame {f}"))?;
        }
    }
    for (c, frames) in &raw.candidates {
        for (f, m) in frames {
            check_size(raw, m, || format!("candidate {c} at frame {f}"))?;
        }
    }

    let mut next_id = raw
        .frames
        .iter()
        .flat_map(|f| f.levels.iter().flatten())
        .map(|m| m.track_id)
        .max()
        .unwrap_or(0)
        + 1;
    let interval = config.detect_interval.max(1);
    let mut activated: Vec<(Granularity, Detection)> = Vec::new();
    let mut tracked: Vec<[Vec<RawMask>; 3]> = Vec::with_capacity(raw.frames.len());
    let mut detections = Vec::new();

    for (f, frame) in raw.frames.iter().enumerate() {
        let mut cur = frame.levels.clone();
        for (level, d) in &activated {
            if let Some(m) = raw.candidates.get(&d.candidate).and_then(|c| c.get(&f)) {
                cur[level.index()].push(RawMask {
                    track_id: d.track_id,
                    mask: m.clone(),
                });
            }
        }
        if config.detect_new_objects && f > 0 && f % interval == 0 {
            if let Some(reseg) = raw.resegmentations.get(&f) {
                for level in Granularity::ALL {
                    let found = detect_new_objects(
                        raw.width,
                        raw.height,
                        &tracked[f - interval][level.index()],
                        &cur[level.index()],
                        reseg.level(level),
                        config.decline_threshold,
                        config.overlap_threshold,
                        &mut next_id,
                    )?;
                    for obj in found {
                        let mask = raw
                            .candidates
                            .get(&obj.candidate)
                            .and_then(|c| c.get(&f))
                            .cloned()
                            .or(obj.mask)
                            .expect("detected objects carry their fresh mask");
                        cur[level.index()].push(RawMask {
                            track_id: obj.track_id,
                            mask,
                        });
                        let d = Detection {
                            frame: f,
                            granularity: level,
                            track_id: obj.track_id,
                            candidate: obj.candidate,
                        };
                        log::info!("frame {f}: new {level} object {} from candidate {}", d.track_id, d.candidate);
                        detections.push(d.clone());
                        activated.push((level, d));
                    }
                }
            }
        }
        if config.resolve_multi_tracks {
            for level in cur.iter_mut() {
                *level = resolve_multi_tracking(level, config.multi_track_iou);
            }
        }
        tracked.push(cur);
    }

    let mut masks = TrackedMasks::new(raw.width, raw.height, raw.frames.len());
    let mut tracks: [TrackSet; 3] = Default::default();
    for (f, levels) in tracked.iter().enumerate() {
        for level in Granularity::ALL {
            let list = &levels[level.index()];
            *masks.id_map_mut(f, level) = flatten(raw.width, raw.height, list);
            for m in list.iter().filter(|m| !m.mask.is_empty()) {
                tracks[level.index()]
                    .entry(m.track_id)
                    .or_default()
                    .insert(f, m.mask.clone());
            }
        }
    }
    masks.rebuild_registry();
    Ok(Consolidation {
        masks,
        tracks,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: u32, m: Mask) -> RawMask {
        RawMask { track_id: id, mask: m }
    }

    #[test]
    fn ratio_of_full_and_quarter_masks() {
        let full = Mask::rect(8, 8, 0, 0, 8, 8);
        assert_eq!(segmented_ratio(8, 8, [&full]).unwrap(), 1.0);
        let a = Mask::rect(8, 8, 0, 0, 4, 4);
        let b = Mask::rect(8, 8, 4, 4, 8, 8);
        assert_eq!(segmented_ratio(8, 8, [&a, &b]).unwrap(), 0.5);
        assert!(matches!(segmented_ratio(0, 4, [] as [&Mask; 0]), Err(Error::EmptyFrame)));
    }

    #[test]
    fn smaller_duplicate_is_dropped() {
        let big = Mask::rect(10, 10, 0, 0, 5, 5);
        let mut small = big.clone();
        small.set(4, 4, false);
        let out = resolve_multi_tracking(&[raw(1, small), raw(2, big.clone())], 0.8);
        assert_eq!(out, vec![raw(2, big)]);
        let a = Mask::rect(10, 10, 0, 0, 2, 2);
        let b = Mask::rect(10, 10, 5, 5, 7, 7);
        assert_eq!(resolve_multi_tracking(&[raw(1, a), raw(2, b)], 0.8).len(), 2);
    }

    #[test]
    fn stable_coverage_does_not_trigger() {
        let prev = vec![raw(1, Mask::rect(10, 10, 0, 0, 10, 9))];
        let cur = vec![raw(1, Mask::rect(10, 10, 0, 0, 10, 9))];
        let fresh = vec![raw(100, Mask::rect(10, 10, 0, 9, 10, 10))];
        let mut next = 5;
        let out = detect_new_objects(10, 10, &prev, &cur, &fresh, 0.9, 0.1, &mut next).unwrap();
        assert!(out.is_empty());
        assert_eq!(next, 5);
    }

    #[test]
    fn overlapping_fresh_mask_is_not_new() {
        let prev = vec![raw(1, Mask::rect(10, 10, 0, 0, 10, 10))];
        let cur = vec![raw(1, Mask::rect(10, 10, 0, 0, 5, 5))];
        let fresh = vec![raw(100, Mask::rect(10, 10, 0, 0, 5, 5)), raw(101, Mask::rect(10, 10, 6, 6, 9, 9))];
        let mut next = 5;
        let out = detect_new_objects(10, 10, &prev, &cur, &fresh, 0.9, 0.1, &mut next).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].track_id, out[0].candidate), (5, 101));
    }

    #[test]
    fn id_reused_across_levels_is_rejected() {
        let mut frame = RawFrame::default();
        frame.levels[Granularity::Small.index()].push(raw(4, Mask::rect(6, 6, 0, 0, 2, 2)));
        frame.levels[Granularity::Large.index()].push(raw(4, Mask::rect(6, 6, 0, 0, 4, 4)));
        let seq = RawMaskSequence {
            width: 6,
            height: 6,
            frames: vec![frame],
            ..Default::default()
        };
        assert!(matches!(consolidate(&seq, &TrackingConfig::default()), Err(Error::Invalid(_))));
    }

    #[test]
    fn flatten_gives_contested_pixels_to_larger_mask() {
        let a = Mask::rect(6, 6, 0, 0, 4, 4);
        let b = Mask::rect(6, 6, 2, 2, 5, 5);
        let map = flatten(6, 6, &[raw(7, b), raw(3, a)]);
        assert_eq!(map.get(3, 3), 3);
        assert_eq!(map.get(4, 4), 7);
    }
}
