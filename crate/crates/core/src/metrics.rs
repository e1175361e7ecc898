//! Evaluation quantities: mIoU, object recall rate, duplicate tracks and PSNR.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Granularity, Mask, TrackedMasks};

/// `10 log10(1 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(pred: &Image, target: &Image) -> Result<f64> {
    pred.check_shape(target, "psnr")?;
    let mse = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean over classes of `|P ∩ G| / |P ∪ G|`, one `(prediction, ground truth)` pair per
/// class. Classes empty on both sides are skipped.
pub fn miou(classes: &[(Mask, Mask)]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Invalid("mIoU needs at least one class".into()));
    }
    let scores: Vec<f64> = classes
        .iter()
        .filter(|(p, g)| p.union_area(g) > 0)
        .map(|(p, g)| p.iou(g))
        .collect();
    if scores.is_empty() {
        return Err(Error::Invalid("every class is absent from both masks".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Object recall rate: mean over frames of tracked / ground-truth object counts. Frames
/// without ground-truth objects are skipped with a warning.
pub fn orr(tracked: &[usize], ground_truth: &[usize]) -> Result<f64> {
    if tracked.len() != ground_truth.len() {
        return Err(Error::Invalid(format!(
            "{} tracked counts for {} frames",
            tracked.len(),
            ground_truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut k = 0usize;
    for (f, (&t, &g)) in tracked.iter().zip(ground_truth).enumerate() {
        if g == 0 {
            log::warn!("frame {f} has no ground-truth objects; skipped");
            continue;
        }
        sum += t as f64 / g as f64;
        k += 1;
    }
    if k == 0 {
        return Err(Error::Invalid("no frame has ground-truth objects".into()));
    }
    Ok(sum / k as f64)
}

/// Per-object masks over time: object id -> frame -> mask.
pub type TrackSet = BTreeMap<u32, BTreeMap<usize, Mask>>;

/// Every object's non-empty masks at one granularity.
pub fn track_set(masks: &TrackedMasks, level: Granularity) -> TrackSet {
    let mut out = TrackSet::new();
    for f in 0..masks.frame_count() {
        let map = masks.id_map(f, level);
        for id in map.object_ids() {
            out.entry(id).or_default().insert(f, map.mask_of(id));
        }
    }
    out
}

/// Re-key tracks through a merge resolver (e.g. `TrackRegistry::resolve`), uniting the
/// masks of tracks that end up under the same id.
pub fn forward_tracks(tracks: &TrackSet, resolve: impl Fn(u32) -> u32) -> TrackSet {
    let mut out = TrackSet::new();
    for (&id, frames) in tracks {
        let entry = out.entry(resolve(id)).or_default();
        for (&f, m) in frames {
            match entry.get_mut(&f) {
                Some(existing) => existing.union_with(m),
                None => {
                    entry.insert(f, m.clone());
                }
            }
        }
    }
    out
}

/// Identity of each track: the ground-truth object it overlaps with IoU >= `min_iou` in the
/// most frames (ties toward the lower id). Tracks matching nothing are left out.
pub fn match_tracks(tracks: &TrackSet, gt: &TrackSet, min_iou: f64) -> BTreeMap<u32, u32> {
    let mut out = BTreeMap::new();
    for (&track, frames) in tracks {
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for (f, mask) in frames {
            let best = gt
                .iter()
                .filter_map(|(&g, gf)| gf.get(f).map(|m| (g, m.iou(mask))))
                .filter(|(_, iou)| *iou >= min_iou)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((g, _)) = best {
                *votes.entry(g).or_default() += 1;
            }
        }
        if let Some((&g, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            out.insert(track, g);
        }
    }
    out
}

/// Sum over ground-truth objects of `max(0, tracks assigned - 1)`.
pub fn duplicate_count(assignment: &BTreeMap<u32, u32>) -> usize {
    let mut per_gt: BTreeMap<u32, usize> = BTreeMap::new();
    for &g in assignment.values() {
        *per_gt.entry(g).or_default() += 1;
    }
    per_gt.values().map(|&n| n.saturating_sub(1)).sum()
}

/// Per frame: how many ground-truth objects are present, and how many of those are
/// covered by some track with IoU >= `min_iou`.
pub fn tracked_counts(tracks: &TrackSet, gt: &TrackSet, frames: usize, min_iou: f64) -> (Vec<usize>, Vec<usize>) {
    let mut tracked = vec![0; frames];
    let mut present = vec![0; frames];
    for f in 0..frames {
        for gf in gt.values() {
            let Some(g) = gf.get(&f).filter(|m| !m.is_empty()) else {
                continue;
            };
            present[f] += 1;
            if tracks
                .values()
                .any(|tf| tf.get(&f).is_some_and(|m| m.iou(g) >= min_iou))
            {
                tracked[f] += 1;
            }
        }
    }
    (tracked, present)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingScores {
    pub orr: f64,
    pub dup: usize,
}

/// ORR and Dup of `tracks` against ground truth, matching at IoU 0.5.
pub fn tracking_scores(tracks: &TrackSet, gt: &TrackSet, frames: usize) -> Result<TrackingScores> {
    let (tracked, present) = tracked_counts(tracks, gt, frames, 0.5);
    Ok(TrackingScores {
        orr: orr(&tracked, &present)?,
        dup: duplicate_count(&match_tracks(tracks, gt, 0.5)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forwarding_unites_merged_tracks() {
        let mut tracks = TrackSet::new();
        tracks.entry(1).or_default().insert(0, Mask::rect(4, 4, 0, 0, 2, 2));
        tracks.entry(2).or_default().insert(0, Mask::rect(4, 4, 2, 2, 4, 4));
        tracks.entry(2).or_default().insert(3, Mask::rect(4, 4, 0, 0, 1, 1));
        let out = forward_tracks(&tracks, |id| if id == 2 { 1 } else { id });
        assert_eq!(out.len(), 1);
        assert_eq!(out[&1][&0].area(), 8);
        assert_eq!(out[&1][&3].area(), 1);
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn miou_extremes() {
        let a = Mask::rect(8, 8, 0, 0, 4, 4);
        let b = Mask::rect(8, 8, 4, 4, 8, 8);
        assert_eq!(miou(&[(a.clone(), a.clone())]).unwrap(), 1.0);
        assert_eq!(miou(&[(a.clone(), b)]).unwrap(), 0.0);
        assert_eq!(miou(&[(a.clone(), a), (Mask::new(8, 8), Mask::new(8, 8))]).unwrap(), 1.0);
        assert!(miou(&[]).is_err());
    }

    #[test]
    fn orr_halves_and_skips() {
        assert_eq!(orr(&[1, 2], &[2, 4]).unwrap(), 0.5);
        assert_eq!(orr(&[3, 0], &[3, 0]).unwrap(), 1.0);
    }

    #[test]
    fn split_object_counts_twice() {
        let a: BTreeMap<u32, u32> = [(1, 7), (2, 7), (3, 7), (4, 8)].into();
        assert_eq!(duplicate_count(&a), 2);
    }
}
