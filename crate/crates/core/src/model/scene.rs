use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Camera, Gaussian, Granularity, TrackedMasks, BACKGROUND};
use crate::render::DeformationField;
use crate::train::TrainConfig;

/// Gaussians owned by one object at one granularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSet {
    pub object_id: u32,
    pub granularity: Granularity,
    pub gaussian_indices: Vec<usize>,
    pub embedding: Option<Vec<f32>>,
    /// `(middle_id, large_id)` for Small sets.
    pub parent_ids: Option<(u32, u32)>,
}

impl ObjectSet {
    pub fn new(object_id: u32, granularity: Granularity) -> Self {
        ObjectSet {
            object_id,
            granularity,
            gaussian_indices: Vec::new(),
            embedding: None,
            parent_ids: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneModel {
    pub gaussians: Vec<Gaussian>,
    pub cameras: Vec<Camera>,
    pub masks: TrackedMasks,
    pub object_sets: Vec<ObjectSet>,
    pub deformation: Option<DeformationField>,
    pub config: TrainConfig,
    pub rng_seed: u64,
}

impl SceneModel {
    pub fn new(gaussians: Vec<Gaussian>, cameras: Vec<Camera>, masks: TrackedMasks) -> Self {
        let mut scene = SceneModel {
            gaussians,
            cameras,
            masks,
            object_sets: Vec::new(),
            deformation: None,
            config: TrainConfig::default(),
            rng_seed: 0,
        };
        scene.rebuild_object_sets();
        scene
    }

    /// Indices of Gaussians carrying `id` at `level`, scanned from the store.
    pub fn members(&self, id: u32, level: Granularity) -> Vec<usize> {
        self.gaussians
            .iter()
            .enumerate()
            .filter(|(_, g)| g.ids.get(level) == id)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn object_set(&self, id: u32) -> Option<&ObjectSet> {
        self.object_sets.iter().find(|s| s.object_id == id)
    }

    pub fn object_set_mut(&mut self, id: u32) -> Option<&mut ObjectSet> {
        self.object_sets.iter_mut().find(|s| s.object_id == id)
    }

    pub fn sets(&self, level: Granularity) -> impl Iterator<Item = &ObjectSet> {
        self.object_sets.iter().filter(move |s| s.granularity == level)
    }

    /// Granularity of a registered object.
    pub fn level_of(&self, id: u32) -> Option<Granularity> {
        self.object_set(id).map(|s| s.granularity)
    }

    /// Recompute set membership from the Gaussians' ids. Keeps embeddings of known
    /// objects and registers every tracked mask object, even with no Gaussians yet.
    pub fn rebuild_object_sets(&mut self) {
        let mut old: BTreeMap<u32, ObjectSet> =
            self.object_sets.drain(..).map(|s| (s.object_id, s)).collect();
        let mut sets: BTreeMap<(Granularity, u32), ObjectSet> = BTreeMap::new();
        for (&id, track) in &self.masks.registry.tracks {
            sets.insert((track.granularity, id), ObjectSet::new(id, track.granularity));
        }
        for id in old.keys() {
            if let Some(s) = old.get(id) {
                if self.masks.registry.resolve(*id) == *id {
                    sets.entry((s.granularity, *id))
                        .or_insert_with(|| ObjectSet::new(*id, s.granularity));
                }
            }
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            for level in Granularity::ALL {
                let id = g.ids.get(level);
                if id == BACKGROUND {
                    continue;
                }
                sets.entry((level, id))
                    .or_insert_with(|| ObjectSet::new(id, level))
                    .gaussian_indices
                    .push(i);
            }
        }
        self.object_sets = sets
            .into_values()
            .map(|mut s| {
                if let Some(prev) = old.remove(&s.object_id) {
                    s.embedding = prev.embedding;
                }
                if s.granularity == Granularity::Small && !s.gaussian_indices.is_empty() {
                    let first = &self.gaussians[s.gaussian_indices[0]].ids;
                    s.parent_ids = Some((first.middle, first.large));
                }
                s
            })
            .collect();
    }
}

/// One broken invariant, naming the invariant and the offending entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub invariant: String,
    pub entity: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.entity)
    }
}

fn violation(invariant: impl Into<String>, entity: impl Into<String>) -> Violation {
    Violation {
        invariant: invariant.into(),
        entity: entity.into(),
    }
}

/// Checks every data-model invariant. Empty result means the scene is consistent.
pub fn validate_scene(scene: &SceneModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scene.gaussians.len();

    for (i, g) in scene.gaussians.iter().enumerate() {
        let norm = g.rotation.norm();
        if !((norm - 1.0).abs() <= 1e-6) {
            out.push(violation("quaternion norm", format!("gaussian {i} has |q| = {norm}")));
        }
        if !g.opacity_logit.is_finite() {
            out.push(violation("opacity", format!("gaussian {i}")));
        }
        if !g.log_scale.iter().all(|s| s.is_finite()) {
            out.push(violation("scale", format!("gaussian {i}")));
        }
        if !g.mean.iter().chain(g.color.iter()).all(|v| v.is_finite()) {
            out.push(violation("finite parameters", format!("gaussian {i}")));
        }
    }

    for (i, cam) in scene.cameras.iter().enumerate() {
        for problem in cam.check() {
            out.push(violation("camera", format!("camera {i}: {problem}")));
        }
    }

    for level in Granularity::ALL {
        let mut owner: Vec<Option<u32>> = vec![None; n];
        let mut reported_overlap = false;
        for set in scene.sets(level) {
            if set.gaussian_indices.is_empty() {
                out.push(violation("empty set", format!("object {} at {level}", set.object_id)));
            }
            for &i in &set.gaussian_indices {
                if i >= n {
                    out.push(violation(
                        "index out of range",
                        format!("object {} lists gaussian {i}", set.object_id),
                    ));
                    continue;
                }
                if let Some(prev) = owner[i] {
                    if !reported_overlap {
                        out.push(violation(
                            format!("overlapping sets at {level}"),
                            format!("gaussian {i} in objects {prev} and {}", set.object_id),
                        ));
                        reported_overlap = true;
                    }
                } else {
                    owner[i] = Some(set.object_id);
                }
                if scene.gaussians[i].ids.get(level) != set.object_id {
                    out.push(violation(
                        format!("set membership at {level}"),
                        format!(
                            "gaussian {i} carries id {} but is listed in object {}",
                            scene.gaussians[i].ids.get(level),
                            set.object_id
                        ),
                    ));
                }
            }
        }
        for (i, g) in scene.gaussians.iter().enumerate() {
            if g.ids.get(level) != BACKGROUND && owner[i].is_none() {
                out.push(violation(
                    format!("uncovered gaussian at {level}"),
                    format!("gaussian {i} with id {}", g.ids.get(level)),
                ));
            }
        }
    }

    for set in scene.sets(Granularity::Small) {
        let mut parents = set
            .gaussian_indices
            .iter()
            .filter(|&&i| i < n)
            .map(|&i| (scene.gaussians[i].ids.middle, scene.gaussians[i].ids.large));
        if let Some(first) = parents.next() {
            if parents.any(|p| p != first) {
                out.push(violation(
                    "hierarchy",
                    format!("small object {} spans several parents", set.object_id),
                ));
            }
        }
    }

    for &id in scene.masks.registry.tracks.keys() {
        if scene.object_set(id).is_none() && scene.masks.registry.resolve(id) == id {
            out.push(violation("unregistered mask object", format!("object {id}")));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Gaussian, ObjectIds};
    use nalgebra::{Vector3, Vector4};

    fn two_object_scene() -> SceneModel {
        let mut gaussians = Vec::new();
        for (i, id) in [1u32, 1, 2, 2, 0].into_iter().enumerate() {
            let g = Gaussian::new(Vector3::new(i as f64, 0.0, 0.0), Vector3::repeat(0.5), 0.1, 0.5)
                .with_ids(ObjectIds::new(if id == 0 { 0 } else { 9 }, 0, id));
            gaussians.push(g);
        }
        SceneModel::new(gaussians, Vec::new(), TrackedMasks::new(2, 2, 1))
    }

    #[test]
    fn consistent_scene_has_no_violations() {
        let scene = two_object_scene();
        assert_eq!(validate_scene(&scene), Vec::new());
        assert_eq!(scene.object_set(1).unwrap().gaussian_indices, vec![0, 1]);
        assert_eq!(scene.object_set(9).unwrap().gaussian_indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn shared_index_is_an_overlap() {
        let mut scene = two_object_scene();
        scene.object_set_mut(2).unwrap().gaussian_indices.push(0);
        let v = validate_scene(&scene);
        assert!(v.iter().any(|v| v.invariant == "overlapping sets at Small"), "{v:?}");
    }

    #[test]
    fn unnormalized_quaternion_is_flagged() {
        let mut scene = two_object_scene();
        scene.gaussians[0].rotation = Vector4::new(2.0, 0.0, 0.0, 0.0);
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, "quaternion norm");
    }

    #[test]
    fn split_parents_break_hierarchy() {
        let mut scene = two_object_scene();
        scene.gaussians[1].ids.large = 7;
        scene.rebuild_object_sets();
        assert!(validate_scene(&scene).iter().any(|v| v.invariant == "hierarchy"));
    }
}
