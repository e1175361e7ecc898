//! Object-specific initialization: every imported point gets an object id per granularity
//! before any optimization, objects missing from the point cloud get random Gaussians
//! inside their masks' viewing volume, and a background set fills the rest of the scene.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::Point;
use crate::model::{Camera, Gaussian, Granularity, Mask, ObjectIds, SceneModel, TrackedMasks, BACKGROUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Weight of the geometric term in the geometric-appearance distance.
    pub geometry_weight: f64,
    /// Lost-track pairs closer than this (geometry in units of the scene diagonal) merge.
    pub merge_threshold: f64,
    /// Random Gaussians given to each object absent from the point cloud.
    pub random_per_object: usize,
    pub background_count: usize,
    pub initial_opacity: f64,
    /// Neighbours used for the initial isotropic scale.
    pub knn: usize,
    /// Fractional growth of the point bounding box used for random sampling.
    pub bbox_margin: f64,
    /// Rejection-sampling attempts per requested random Gaussian.
    pub attempts_per_sample: usize,
    /// Only cameras with `time <=` this vote on ids (dynamic scenes).
    pub max_vote_time: Option<f64>,
    pub near: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            geometry_weight: 0.5,
            merge_threshold: 0.1,
            random_per_object: 1000,
            background_count: 5000,
            initial_opacity: 0.1,
            knn: 3,
            bbox_margin: 0.5,
            attempts_per_sample: 200,
            max_vote_time: None,
            near: 0.01,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.geometry_weight) {
            out.push(format!("init.geometry_weight must lie in [0, 1], got {}", self.geometry_weight));
        }
        if !(self.merge_threshold >= 0.0) {
            out.push("init.merge_threshold must be non-negative".into());
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity < 1.0) {
            out.push(format!("init.initial_opacity must lie in (0, 1), got {}", self.initial_opacity));
        }
        if self.knn == 0 {
            out.push("init.knn must be at least 1".into());
        }
        out
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn of(points: impl IntoIterator<Item = Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Bounds { min: first, max: first };
        for p in it {
            b.min = b.min.inf(&p);
            b.max = b.max.sup(&p);
        }
        Some(b)
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    /// Grown by `fraction` of its extent on every side; degenerate axes grow by `fraction`.
    pub fn expanded(&self, fraction: f64) -> Self {
        let pad = (self.max - self.min).map(|e| if e > 0.0 { e * fraction } else { fraction });
        Bounds {
            min: self.min - pad,
            max: self.max + pad,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            if self.max[i] > self.min[i] {
                rng.random_range(self.min[i]..self.max[i])
            } else {
                self.min[i]
            }
        })
    }
}

/// Per-(level, id) pixel totals over all frames, used to break vote ties.
fn mask_areas(masks: &TrackedMasks) -> [BTreeMap<u32, usize>; 3] {
    let mut out: [BTreeMap<u32, usize>; 3] = Default::default();
    for f in 0..masks.frame_count() {
        for level in Granularity::ALL {
            for &id in &masks.id_map(f, level).ids {
                *out[level.index()].entry(id).or_default() += 1;
            }
        }
    }
    out
}

fn voting_views<'a>(cameras: &'a [Camera], masks: &TrackedMasks, cfg: &InitConfig) -> Vec<&'a Camera> {
    cameras
        .iter()
        .filter(|c| c.frame < masks.frame_count())
        .filter(|c| cfg.max_vote_time.is_none_or(|t| c.time <= t))
        .filter(|c| (c.width, c.height) == (masks.width, masks.height))
        .collect()
}

/// Winner of one level's votes: most votes, then larger total mask area, and BACKGROUND
/// when still tied.
fn elect(votes: &BTreeMap<u32, usize>, areas: &BTreeMap<u32, usize>) -> u32 {
    let Some(&top) = votes.values().max() else {
        return BACKGROUND;
    };
    let leaders: Vec<u32> = votes.iter().filter(|(_, &n)| n == top).map(|(&id, _)| id).collect();
    if leaders.len() == 1 {
        return leaders[0];
    }
    let area = |id: u32| areas.get(&id).copied().unwrap_or(0);
    let best = leaders.iter().map(|&id| area(id)).max().unwrap_or(0);
    let mut winners = leaders.into_iter().filter(|&id| area(id) == best);
    match (winners.next(), winners.next()) {
        (Some(id), None) => id,
        _ => BACKGROUND,
    }
}

fn vote(
    p: &Vector3<f64>,
    views: &[&Camera],
    masks: &TrackedMasks,
    areas: &[BTreeMap<u32, usize>; 3],
    near: f64,
) -> ObjectIds {
    let mut votes: [BTreeMap<u32, usize>; 3] = Default::default();
    for cam in views {
        if let Some((x, y)) = cam.pixel_of(p, near) {
            for level in Granularity::ALL {
                *votes[level.index()]
                    .entry(masks.id_map(cam.frame, level).get(x, y))
                    .or_default() += 1;
            }
        }
    }
    let mut ids = ObjectIds::default();
    for level in Granularity::ALL {
        ids.set(level, elect(&votes[level.index()], &areas[level.index()]));
    }
    ids
}

/// Label each point with the majority mask id under its projection in every view that
/// sees it, per granularity. Unsegmented pixels vote for BACKGROUND.
pub fn assign_object_ids(points: &[Point], cameras: &[Camera], masks: &TrackedMasks, cfg: &InitConfig) -> Result<Vec<Gaussian>> {
    if cameras.is_empty() {
        return Err(Error::NoCameras);
    }
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    let views = voting_views(cameras, masks, cfg);
    let areas = mask_areas(masks);
    Ok(points
        .par_iter()
        .map(|p| {
            Gaussian::new(p.position, Vector3::from(p.color), 1.0, cfg.initial_opacity)
                .with_ids(vote(&p.position, &views, masks, &areas, cfg.near))
        })
        .collect())
}

fn majority(values: impl Iterator<Item = u32>) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // ties go to the lower id
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
}

/// Give every Small object a single Middle and Large parent, and every Middle object a
/// single Large parent, by majority over its members. Returns how many Gaussians changed.
pub fn repair_hierarchy(gaussians: &mut [Gaussian]) -> usize {
    let mut changed = 0;
    for (child, parents) in [
        (Granularity::Small, &[Granularity::Middle, Granularity::Large][..]),
        (Granularity::Middle, &[Granularity::Large][..]),
    ] {
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, g) in gaussians.iter().enumerate() {
            let id = g.ids.get(child);
            if id != BACKGROUND {
                members.entry(id).or_default().push(i);
            }
        }
        for idx in members.values() {
            for &parent in parents {
                let winner = majority(idx.iter().map(|&i| gaussians[i].ids.get(parent))).expect("non-empty set");
                for &i in idx {
                    if gaussians[i].ids.get(parent) != winner {
                        gaussians[i].ids.set(parent, winner);
                        changed += 1;
                    }
                }
            }
        }
    }
    changed
}

fn centroid_and_color(gaussians: &[Gaussian], idx: &[usize], id: u32) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if idx.is_empty() {
        return Err(Error::EmptySet(id));
    }
    let n = idx.len() as f64;
    let c = idx.iter().map(|&i| gaussians[i].mean).sum::<Vector3<f64>>() / n;
    let a = idx.iter().map(|&i| gaussians[i].color).sum::<Vector3<f64>>() / n;
    Ok((c, a))
}

/// `w * |mean center difference| + (1 - w) * |mean color difference|` between two
/// Gaussian sets given by index lists into `gaussians`. Errors on an empty set.
pub fn geometric_appearance_distance(
    gaussians: &[Gaussian],
    a: &[usize],
    b: &[usize],
    geometry_weight: f64,
) -> Result<f64> {
    distance_scaled(gaussians, (a, 0), (b, 0), geometry_weight, 1.0)
}

fn distance_scaled(
    gaussians: &[Gaussian],
    a: (&[usize], u32),
    b: (&[usize], u32),
    w: f64,
    geometry_scale: f64,
) -> Result<f64> {
    let (ca, pa) = centroid_and_color(gaussians, a.0, a.1)?;
    let (cb, pb) = centroid_and_color(gaussians, b.0, b.1)?;
    Ok(w * (ca - cb).norm() / geometry_scale + (1.0 - w) * (pa - pb).norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub granularity: Granularity,
    pub from: u32,
    pub into: u32,
    pub distance: f64,
}

/// Merge tracks of one object broken apart by occlusion. Only pairs whose frame ranges are
/// disjoint are candidates; the closest pair under `threshold` merges first (into the track
/// seen earlier), distances are recomputed, and this repeats until no pair qualifies.
/// Geometry is divided by `geometry_scale` (the scene diagonal) before weighting.
pub fn merge_lost_tracks(
    gaussians: &mut [Gaussian],
    masks: &mut TrackedMasks,
    level: Granularity,
    geometry_weight: f64,
    threshold: f64,
    geometry_scale: f64,
) -> Vec<MergeRecord> {
    let mut records = Vec::new();
    loop {
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, g) in gaussians.iter().enumerate() {
            let id = g.ids.get(level);
            if id != BACKGROUND && masks.registry.tracks.contains_key(&id) {
                members.entry(id).or_default().push(i);
            }
        }
        let ids: Vec<u32> = members.keys().copied().collect();
        let mut best: Option<(f64, u32, u32)> = None;
        for (k, &a) in ids.iter().enumerate() {
            for &b in &ids[k + 1..] {
                let (ta, tb) = (&masks.registry.tracks[&a], &masks.registry.tracks[&b]);
                if !ta.disjoint_from(tb) {
                    continue;
                }
                let d = distance_scaled(gaussians, (&members[&a], a), (&members[&b], b), geometry_weight, geometry_scale)
                    .expect("sets built from members are non-empty");
                if d < threshold && best.is_none_or(|(bd, ..)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let Some((distance, a, b)) = best else {
            break;
        };
        let (ta, tb) = (&masks.registry.tracks[&a], &masks.registry.tracks[&b]);
        let (into, from) = if (ta.first_frame, a) <= (tb.first_frame, b) { (a, b) } else { (b, a) };
        for &i in &members[&from] {
            gaussians[i].ids.set(level, into);
        }
        masks.merge_ids(level, from, into);
        log::info!("merged {level} track {from} into {into} (distance {distance:.4})");
        records.push(MergeRecord {
            granularity: level,
            from,
            into,
            distance,
        });
    }
    records
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectInit {
    pub granularity: Option<Granularity>,
    pub from_points: usize,
    pub random: usize,
    /// Masks back-projected to nothing; random Gaussians were spread over the scene box.
    pub fallback: bool,
}

/// Contents of `init_report.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub points: usize,
    pub objects: BTreeMap<u32, ObjectInit>,
    pub merges: Vec<MergeRecord>,
    pub fallbacks: Vec<u32>,
    pub background: usize,
    pub hierarchy_repairs: usize,
    pub gaussians: usize,
}

fn image_color(p: &Vector3<f64>, views: &[(&Camera, Option<&Image>)], near: f64) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    let mut n = 0.0;
    for (cam, img) in views {
        if let (Some(img), Some((x, y))) = (img, cam.pixel_of(p, near)) {
            sum += Vector3::from(img.get(x, y));
            n += 1.0;
        }
    }
    if n > 0.0 {
        sum / n
    } else {
        Vector3::repeat(0.5)
    }
}

/// Random Gaussians for every registered object that owns none, and the background set.
/// `images` (aligned with `cameras`) supply colors; gray otherwise.
#[allow(clippy::too_many_arguments)]
pub fn init_missing_and_background(
    gaussians: &mut Vec<Gaussian>,
    masks: &TrackedMasks,
    cameras: &[Camera],
    images: Option<&[Image]>,
    bounds: &Bounds,
    cfg: &InitConfig,
    rng: &mut impl Rng,
    report: &mut InitReport,
) {
    let views = voting_views(cameras, masks, cfg);
    let areas = mask_areas(masks);
    let colored: Vec<(&Camera, Option<&Image>)> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| (c, images.and_then(|im| im.get(i))))
        .collect();
    let region = bounds.expanded(cfg.bbox_margin);

    let mut owned: BTreeMap<u32, usize> = BTreeMap::new();
    for g in gaussians.iter() {
        for level in Granularity::ALL {
            *owned.entry(g.ids.get(level)).or_default() += 1;
        }
    }
    for (&id, track) in &masks.registry.tracks {
        if owned.get(&id).copied().unwrap_or(0) > 0 || masks.registry.resolve(id) != id {
            continue;
        }
        let level = track.granularity;
        let seen: Vec<(&Camera, Mask)> = views
            .iter()
            .map(|c| (*c, masks.mask(c.frame, level, id)))
            .filter(|(_, m)| !m.is_empty())
            .collect();
        let inside = |p: &Vector3<f64>| {
            seen.iter().all(|(cam, m)| cam.pixel_of(p, cfg.near).is_some_and(|(x, y)| m.get(x, y)))
        };
        let mut samples = Vec::with_capacity(cfg.random_per_object);
        let attempts = cfg.random_per_object * cfg.attempts_per_sample;
        for _ in 0..attempts {
            if samples.len() == cfg.random_per_object {
                break;
            }
            let p = region.sample(rng);
            if inside(&p) {
                samples.push(p);
            }
        }
        let entry = report.objects.entry(id).or_default();
        entry.granularity = Some(level);
        if samples.is_empty() {
            log::warn!("object {id}: masks back-project to an empty region; sampling the scene box");
            entry.fallback = true;
            report.fallbacks.push(id);
            samples = (0..cfg.random_per_object).map(|_| bounds.sample(rng)).collect();
        } else {
            let found = samples.len();
            for k in 0..cfg.random_per_object.saturating_sub(found) {
                samples.push(samples[k % found]);
            }
        }
        entry.random = samples.len();
        for p in samples {
            let mut ids = vote(&p, &views, masks, &areas, cfg.near);
            ids.set(level, id);
            gaussians.push(
                Gaussian::new(p, image_color(&p, &colored, cfg.near), 1.0, cfg.initial_opacity).with_ids(ids),
            );
        }
    }

    for _ in 0..cfg.background_count {
        let p = region.sample(rng);
        gaussians.push(Gaussian::new(p, image_color(&p, &colored, cfg.near), 1.0, cfg.initial_opacity));
    }
    report.background = cfg.background_count;
}

/// Isotropic log-scale from the RMS distance to the `k` nearest other Gaussians.
pub fn knn_scales(gaussians: &mut [Gaussian], k: usize) {
    let means: Vec<Vector3<f64>> = gaussians.iter().map(|g| g.mean).collect();
    let scales: Vec<f64> = (0..means.len())
        .into_par_iter()
        .map(|i| {
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            for (j, m) in means.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (m - means[i]).norm_squared();
                if best.len() < k || d < best[best.len() - 1] {
                    let at = best.partition_point(|&b| b <= d);
                    best.insert(at, d);
                    best.truncate(k);
                }
            }
            if best.is_empty() {
                return 0.01;
            }
            (best.iter().sum::<f64>() / best.len() as f64).sqrt().max(1e-7)
        })
        .collect();
    for (g, s) in gaussians.iter_mut().zip(scales) {
        g.log_scale = Vector3::repeat(s.ln());
    }
}

/// Full initialization: id assignment, hierarchy repair, random fill for missing objects,
/// lost-track merging at every granularity, background and initial scales.
pub fn initialize(
    points: &[Point],
    cameras: &[Camera],
    mut masks: TrackedMasks,
    images: Option<&[Image]>,
    cfg: &InitConfig,
    seed: u64,
) -> Result<(SceneModel, InitReport)> {
    let mut gaussians = assign_object_ids(points, cameras, &masks, cfg)?;
    let mut report = InitReport {
        points: points.len(),
        ..Default::default()
    };
    report.hierarchy_repairs += repair_hierarchy(&mut gaussians);
    for g in &gaussians {
        for level in Granularity::ALL {
            let id = g.ids.get(level);
            if id != BACKGROUND {
                let e = report.objects.entry(id).or_default();
                e.granularity = Some(level);
                e.from_points += 1;
            }
        }
    }
    let bounds = Bounds::of(points.iter().map(|p| p.position)).expect("point cloud checked non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = cfg.background_count;
    let without_bg = InitConfig {
        background_count: 0,
        ..cfg.clone()
    };
    init_missing_and_background(&mut gaussians, &masks, cameras, images, &bounds, &without_bg, &mut rng, &mut report);

    let scale = if bounds.diagonal() > 0.0 { bounds.diagonal() } else { 1.0 };
    for level in Granularity::ALL {
        report.merges.extend(merge_lost_tracks(
            &mut gaussians,
            &mut masks,
            level,
            cfg.geometry_weight,
            cfg.merge_threshold,
            scale,
        ));
    }
    for m in &report.merges {
        if let Some(from) = report.objects.remove(&m.from) {
            let into = report.objects.entry(m.into).or_default();
            into.from_points += from.from_points;
            into.random += from.random;
        }
    }
    report.hierarchy_repairs += repair_hierarchy(&mut gaussians);

    let only_bg = InitConfig {
        random_per_object: 0,
        background_count: background,
        ..cfg.clone()
    };
    let mut bg_report = InitReport::default();
    init_missing_and_background(&mut gaussians, &masks, cameras, images, &bounds, &only_bg, &mut rng, &mut bg_report);
    report.background = bg_report.background;
    knn_scales(&mut gaussians, cfg.knn);
    report.gaussians = gaussians.len();

    let mut scene = SceneModel::new(gaussians, cameras.to_vec(), masks);
    scene.rng_seed = seed;
    Ok((scene, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(u32, usize)]) -> BTreeMap<u32, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn election_rules() {
        assert_eq!(elect(&counts(&[(3, 2), (5, 1)]), &BTreeMap::new()), 3);
        assert_eq!(elect(&counts(&[(3, 1), (5, 1)]), &counts(&[(3, 10), (5, 20)])), 5);
        assert_eq!(elect(&counts(&[(3, 1), (5, 1)]), &counts(&[(3, 10), (5, 10)])), BACKGROUND);
        assert_eq!(elect(&BTreeMap::new(), &BTreeMap::new()), BACKGROUND);
    }

    #[test]
    fn distance_closed_forms() {
        let g = |x: f64, c: f64| Gaussian::new(Vector3::new(x, 0.0, 0.0), Vector3::repeat(c), 0.1, 0.5);
        let gs = vec![g(0.0, 0.2), g(1.0, 0.2), g(0.0, 0.2)];
        assert_eq!(geometric_appearance_distance(&gs, &[0], &[2], 0.5).unwrap(), 0.0);
        assert_eq!(geometric_appearance_distance(&gs, &[0], &[1], 0.5).unwrap(), 0.5);
        assert!(matches!(geometric_appearance_distance(&gs, &[], &[1], 0.5), Err(Error::EmptySet(_))));
    }

    #[test]
    fn hierarchy_repair_uses_majority() {
        let mut gs: Vec<Gaussian> = [(1, 2), (1, 2), (4, 5)]
            .iter()
            .map(|&(l, m)| {
                Gaussian::new(Vector3::zeros(), Vector3::zeros(), 0.1, 0.5).with_ids(ObjectIds::new(l, m, 9))
            })
            .collect();
        assert_eq!(repair_hierarchy(&mut gs), 2);
        assert!(gs.iter().all(|g| g.ids == ObjectIds::new(1, 2, 9)));
    }

    #[test]
    fn knn_scale_of_a_line() {
        let mut gs: Vec<Gaussian> = (0..5)
            .map(|i| Gaussian::new(Vector3::new(i as f64, 0.0, 0.0), Vector3::zeros(), 0.1, 0.5))
            .collect();
        knn_scales(&mut gs, 2);
        assert!((gs[2].scale().x - 1.0).abs() < 1e-12);
        assert!((gs[0].scale().x - (2.5f64).sqrt()).abs() < 1e-12);
    }
}
