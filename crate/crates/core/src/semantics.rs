//! One embedding per object, averaged from per-view crop embeddings, and cosine-similarity
//! retrieval over the trained object sets.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_file;
use crate::model::{Granularity, SceneModel, TrackedMasks};
use crate::render::object_members;

const MAGIC: &[u8; 4] = b"SSEM";
const VERSION: u32 = 1;
const UNIT_TOLERANCE: f64 = 1e-5;

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    dot / (norm(a) * norm(b))
}

/// Per-(object, frame) unit embeddings of masked image crops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub views: BTreeMap<(u32, u32), Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            views: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, object: u32, frame: u32, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dimension {
            return Err(Error::format(
                "embedding",
                format!("object {object} frame {frame}: dimension {} instead of {}", v.len(), self.dimension),
            ));
        }
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::format(
                "embedding",
                format!("object {object} frame {frame}: norm {n} is not 1"),
            ));
        }
        self.views.insert((object, frame), v);
        Ok(())
    }

    /// Header (magic `SSEM`, version, dimension, count as little-endian u32) then records of
    /// object id, frame and `dimension` f32 values.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.dimension as u32)?;
        w.write_u32::<LittleEndian>(self.views.len() as u32)?;
        for (&(object, frame), v) in &self.views {
            w.write_u32::<LittleEndian>(object)?;
            w.write_u32::<LittleEndian>(frame)?;
            for &x in v {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("embedding file", "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::format("embedding file", format!("unsupported version {version}")));
        }
        let dimension = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u32::<LittleEndian>()?;
        let mut table = EmbeddingTable::new(dimension);
        for _ in 0..count {
            let object = r.read_u32::<LittleEndian>()?;
            let frame = r.read_u32::<LittleEndian>()?;
            let mut v = vec![0f32; dimension];
            r.read_f32_into::<LittleEndian>(&mut v)?;
            table.insert(object, frame, v)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        write_file(path.as_ref(), &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::read(bytes.as_slice())
    }
}

/// Mean of the object's per-view embeddings over views not flagged partial, normalized.
/// Falls back to every view (with a warning) when all are partial.
pub fn associate(object: u32, table: &EmbeddingTable, masks: &TrackedMasks) -> Result<Vec<f32>> {
    let all: Vec<(u32, &Vec<f32>)> = table
        .views
        .range((object, 0)..=(object, u32::MAX))
        .map(|(&(_, f), v)| (f, v))
        .collect();
    if all.is_empty() {
        return Err(Error::NoViews(object));
    }
    let kept: Vec<&Vec<f32>> = all
        .iter()
        .filter(|(f, _)| !masks.is_partial(object, *f as usize))
        .map(|(_, v)| *v)
        .collect();
    let used = if kept.is_empty() {
        log::warn!("object {object}: every view is partial; averaging all views");
        all.iter().map(|(_, v)| *v).collect()
    } else {
        kept
    };
    let mut mean = vec![0.0f64; table.dimension];
    for v in &used {
        for (m, &x) in mean.iter_mut().zip(v.iter()) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= used.len() as f64;
    }
    Ok(normalize(&mean))
}

/// Attach an embedding to every object set that has views; returns the objects without any.
pub fn associate_all(scene: &mut SceneModel, table: &EmbeddingTable) -> Vec<u32> {
    let mut missing = Vec::new();
    let ids: Vec<u32> = scene.object_sets.iter().map(|s| s.object_id).collect();
    for id in ids {
        match associate(id, table, &scene.masks) {
            Ok(e) => scene.object_set_mut(id).expect("listed above").embedding = Some(e),
            Err(_) => {
                log::warn!("object {id} has no embedded views");
                missing.push(id);
            }
        }
    }
    missing
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub object_id: u32,
    pub granularity: Granularity,
    pub score: f64,
    pub gaussian_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    /// Descending score, ties toward the lower id.
    pub hits: Vec<QueryHit>,
}

impl QueryResult {
    pub fn best(&self) -> Option<&QueryHit> {
        self.hits.first()
    }
}

/// Rank objects with embeddings by cosine similarity to `text`, at one granularity or all.
pub fn query(scene: &SceneModel, text: &[f32], level: Option<Granularity>, top_k: Option<usize>) -> Result<QueryResult> {
    let mut hits: Vec<QueryHit> = scene
        .object_sets
        .iter()
        .filter(|s| level.is_none_or(|l| s.granularity == l))
        .filter_map(|s| {
            let e = s.embedding.as_ref()?;
            if e.len() != text.len() {
                return None;
            }
            Some(QueryHit {
                object_id: s.object_id,
                granularity: s.granularity,
                score: cosine(text, e),
                gaussian_indices: object_members(scene, s.object_id, s.granularity).ok()?,
            })
        })
        .collect();
    if hits.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.object_id.cmp(&b.object_id)));
    if let Some(k) = top_k {
        hits.truncate(k);
    }
    Ok(QueryResult { hits })
}

/// A query prompt with the object it should retrieve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub granularity: Granularity,
    pub object_id: u32,
}

/// Source of crop and text embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    /// Per-view embeddings for the objects in `masks`.
    fn view_table(&self, masks: &TrackedMasks) -> Result<EmbeddingTable>;
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>>;
}

/// Reads adapter output: the binary crop-embedding file and a JSON map of prompt to vector.
#[derive(Clone, Debug, Default)]
pub struct FileProvider {
    pub table: EmbeddingTable,
    pub prompts: BTreeMap<String, Vec<f32>>,
}

impl FileProvider {
    pub fn load(table: impl AsRef<Path>, prompts: Option<&Path>) -> Result<Self> {
        let table = EmbeddingTable::load(table)?;
        let prompts = match prompts {
            Some(p) => crate::io::read_json(p)?,
            None => BTreeMap::new(),
        };
        Ok(FileProvider { table, prompts })
    }
}

impl EmbeddingProvider for FileProvider {
    fn dimension(&self) -> usize {
        self.table.dimension
    }

    fn view_table(&self, _masks: &TrackedMasks) -> Result<EmbeddingTable> {
        Ok(self.table.clone())
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>> {
        self.prompts
            .get(prompt)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("no stored embedding for prompt {prompt:?}")))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic unit vector derived from a string.
pub fn hashed_unit_vector(key: &str, dimension: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
    let v: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&v)
}

pub fn one_hot(axis: usize, dimension: usize) -> Vec<f32> {
    let mut v = vec![0.0; dimension];
    v[axis] = 1.0;
    v
}

/// Model-free provider for tests and demos. Objects and prompts listed in `axes` get one-hot
/// vectors on their axis; everything else gets a hashed unit vector.
#[derive(Clone, Debug, Default)]
pub struct MockProvider {
    pub dimension: usize,
    pub object_axes: BTreeMap<u32, usize>,
    pub prompt_axes: BTreeMap<String, usize>,
}

impl MockProvider {
    pub fn hashed(dimension: usize) -> Self {
        MockProvider {
            dimension,
            ..Default::default()
        }
    }

    fn object_vector(&self, object: u32) -> Vec<f32> {
        match self.object_axes.get(&object) {
            Some(&a) => one_hot(a, self.dimension),
            None => hashed_unit_vector(&format!("object:{object}"), self.dimension),
        }
    }
}

impl EmbeddingProvider for MockProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn view_table(&self, masks: &TrackedMasks) -> Result<EmbeddingTable> {
        let mut table = EmbeddingTable::new(self.dimension);
        for level in Granularity::ALL {
            for object in masks.objects(level) {
                let v = self.object_vector(object);
                for f in masks.frames_of(object) {
                    table.insert(object, f as u32, v.clone())?;
                }
            }
        }
        Ok(table)
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>> {
        Ok(match self.prompt_axes.get(prompt) {
            Some(&a) => one_hot(a, self.dimension),
            None => hashed_unit_vector(&format!("text:{prompt}"), self.dimension),
        })
    }
}

/// Write one object's Gaussians (or the background's, for `BACKGROUND`) as PLY.
pub fn export_object(scene: &SceneModel, object: u32, level: Granularity, out: &mut impl Write) -> Result<usize> {
    let members = object_members(scene, object, level)?;
    let gaussians: Vec<_> = members.iter().map(|&i| scene.gaussians[i].clone()).collect();
    crate::io::write_gaussians_to(out, &gaussians)?;
    Ok(gaussians.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_exact() {
        let mut t = EmbeddingTable::new(8);
        t.insert(3, 0, hashed_unit_vector("a", 8)).unwrap();
        t.insert(3, 5, hashed_unit_vector("b", 8)).unwrap();
        t.insert(9, 1, one_hot(2, 8)).unwrap();
        let mut bytes = Vec::new();
        t.write(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * (8 + 32));
        assert_eq!(EmbeddingTable::read(bytes.as_slice()).unwrap(), t);
        bytes[0] = b'X';
        assert!(EmbeddingTable::read(bytes.as_slice()).is_err());
    }

    #[test]
    fn rejects_non_unit_vectors() {
        let mut t = EmbeddingTable::new(2);
        assert!(t.insert(1, 0, vec![1.0, 1.0]).is_err());
        assert!(t.insert(1, 0, vec![1.0]).is_err());
    }

    #[test]
    fn orthogonal_views_average_to_diagonal() {
        let mut t = EmbeddingTable::new(2);
        t.insert(1, 0, one_hot(0, 2)).unwrap();
        t.insert(1, 1, one_hot(1, 2)).unwrap();
        let masks = TrackedMasks::new(1, 1, 2);
        let f = associate(1, &t, &masks).unwrap();
        assert!((cosine(&f, &one_hot(0, 2)) - 0.5f64.sqrt()).abs() < 1e-7);
        assert!(matches!(associate(2, &t, &masks), Err(Error::NoViews(2))));
    }

    #[test]
    fn partial_views_are_skipped_unless_all_partial() {
        let mut t = EmbeddingTable::new(2);
        t.insert(1, 0, one_hot(0, 2)).unwrap();
        t.insert(1, 1, one_hot(1, 2)).unwrap();
        let mut masks = TrackedMasks::new(1, 1, 2);
        masks.flag_partial(1, 1);
        assert_eq!(associate(1, &t, &masks).unwrap(), one_hot(0, 2));
        masks.flag_partial(1, 0);
        assert!((associate(1, &t, &masks).unwrap()[0] - 0.5f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn hashed_vectors_are_stable_units() {
        let a = hashed_unit_vector("chair", 64);
        assert_eq!(a, hashed_unit_vector("chair", 64));
        assert!((norm(&a) - 1.0).abs() < 1e-6);
        assert_ne!(a, hashed_unit_vector("table", 64));
    }
}
