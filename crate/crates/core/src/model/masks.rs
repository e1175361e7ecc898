use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Granularity, BACKGROUND};

/// Bit-packed binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<u64>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Mask {
            width,
            height,
            bits: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Mask::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.get_index(y as usize * self.width as usize + x as usize)
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, v: bool) {
        if v {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.set_index(y as usize * self.width as usize + x as usize, v);
    }

    pub fn area(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn intersection_area(&self, other: &Mask) -> usize {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_area(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    /// Intersection over union; zero when both masks are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let union = self.union_area(other);
        if union == 0 {
            return 0.0;
        }
        self.intersection_area(other) as f64 / union as f64
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
    }

    /// Indices of set pixels in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.get_index(i))
    }

    /// Uncompressed run-length encoding in row-major order; the first run counts unset pixels.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for i in 0..self.len() {
            let v = self.get_index(i);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(width: u32, height: u32, counts: &[u32]) -> Option<Self> {
        let mut m = Mask::new(width, height);
        let mut i = 0usize;
        let mut value = false;
        for &c in counts {
            let end = i + c as usize;
            if end > m.len() {
                return None;
            }
            if value {
                for j in i..end {
                    m.set_index(j, true);
                }
            }
            i = end;
            value = !value;
        }
        (i == m.len()).then_some(m)
    }
}

/// Per-pixel object ids for one frame at one granularity; `0` marks unsegmented pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
}

impl IdMap {
    pub fn new(width: u32, height: u32) -> Self {
        IdMap {
            width,
            height,
            ids: vec![BACKGROUND; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, id: u32) {
        self.ids[y as usize * self.width as usize + x as usize] = id;
    }

    pub fn mask_of(&self, id: u32) -> Mask {
        let mut m = Mask::new(self.width, self.height);
        for (i, &v) in self.ids.iter().enumerate() {
            if v == id {
                m.set_index(i, true);
            }
        }
        m
    }

    pub fn area_of(&self, id: u32) -> usize {
        self.ids.iter().filter(|&&v| v == id).count()
    }

    /// Non-background ids present in the map.
    pub fn object_ids(&self) -> BTreeSet<u32> {
        self.ids.iter().copied().filter(|&v| v != BACKGROUND).collect()
    }

    pub fn replace(&mut self, from: u32, into: u32) {
        for v in &mut self.ids {
            if *v == from {
                *v = into;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackInfo {
    pub granularity: Granularity,
    pub first_frame: usize,
    pub last_frame: usize,
}

impl TrackInfo {
    /// True when one track ends before the other begins.
    pub fn disjoint_from(&self, other: &TrackInfo) -> bool {
        self.last_frame < other.first_frame || other.last_frame < self.first_frame
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackMerge {
    pub granularity: Granularity,
    pub from: u32,
    pub into: u32,
}

/// Track metadata that survives without the per-pixel maps.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRegistry {
    pub tracks: BTreeMap<u32, TrackInfo>,
    pub merges: Vec<TrackMerge>,
    /// `(object_id, frame)` pairs whose mask was judged partial.
    pub partial: BTreeSet<(u32, usize)>,
}

impl TrackRegistry {
    pub fn objects(&self, level: Granularity) -> Vec<u32> {
        self.tracks
            .iter()
            .filter(|(_, t)| t.granularity == level)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn is_partial(&self, object: u32, frame: usize) -> bool {
        self.partial.contains(&(object, frame))
    }

    /// Follow merge forwarding to the surviving id.
    pub fn resolve(&self, mut id: u32) -> u32 {
        for _ in 0..self.merges.len() + 1 {
            match self.merges.iter().find(|m| m.from == id) {
                Some(m) => id = m.into,
                None => break,
            }
        }
        id
    }
}

/// Consolidated per-object masks: one id map per frame and granularity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedMasks {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<[IdMap; 3]>,
    pub registry: TrackRegistry,
}

impl TrackedMasks {
    pub fn new(width: u32, height: u32, frame_count: usize) -> Self {
        let blank = IdMap::new(width, height);
        TrackedMasks {
            width,
            height,
            frames: vec![[blank.clone(), blank.clone(), blank]; frame_count],
            registry: TrackRegistry::default(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn id_map(&self, frame: usize, level: Granularity) -> &IdMap {
        &self.frames[frame][level.index()]
    }

    pub fn id_map_mut(&mut self, frame: usize, level: Granularity) -> &mut IdMap {
        &mut self.frames[frame][level.index()]
    }

    /// Mask of `object` in `frame`; empty when the frame is unknown.
    pub fn mask(&self, frame: usize, level: Granularity, object: u32) -> Mask {
        match self.frames.get(frame) {
            Some(maps) => maps[level.index()].mask_of(object),
            None => Mask::new(self.width, self.height),
        }
    }

    pub fn objects(&self, level: Granularity) -> Vec<u32> {
        self.registry.objects(level)
    }

    pub fn granularity_of(&self, object: u32) -> Option<Granularity> {
        self.registry.tracks.get(&object).map(|t| t.granularity)
    }

    /// Frames in which `object` covers at least one pixel.
    pub fn frames_of(&self, object: u32) -> Vec<usize> {
        let Some(level) = self.granularity_of(object) else {
            return Vec::new();
        };
        (0..self.frames.len())
            .filter(|&f| self.frames[f][level.index()].ids.contains(&object))
            .collect()
    }

    pub fn is_partial(&self, object: u32, frame: usize) -> bool {
        self.registry.is_partial(object, frame)
    }

    /// Partial flags are sticky: there is no way to clear one.
    pub fn flag_partial(&mut self, object: u32, frame: usize) {
        self.registry.partial.insert((object, frame));
    }

    /// Recompute first/last frames from the maps, keeping merges and partial flags.
    pub fn rebuild_registry(&mut self) {
        let mut tracks: BTreeMap<u32, TrackInfo> = BTreeMap::new();
        for (f, maps) in self.frames.iter().enumerate() {
            for level in Granularity::ALL {
                for id in maps[level.index()].object_ids() {
                    tracks
                        .entry(id)
                        .and_modify(|t| t.last_frame = f)
                        .or_insert(TrackInfo {
                            granularity: level,
                            first_frame: f,
                            last_frame: f,
                        });
                }
            }
        }
        self.registry.tracks = tracks;
    }

    /// Rewrite every pixel of `from` to `into` at one granularity and record the forwarding.
    pub fn merge_ids(&mut self, level: Granularity, from: u32, into: u32) {
        for maps in &mut self.frames {
            maps[level.index()].replace(from, into);
        }
        if let Some(old) = self.registry.tracks.remove(&from) {
            let t = self.registry.tracks.entry(into).or_insert(old.clone());
            t.first_frame = t.first_frame.min(old.first_frame);
            t.last_frame = t.last_frame.max(old.last_frame);
        }
        let moved: Vec<_> = self
            .registry
            .partial
            .iter()
            .filter(|(o, _)| *o == from)
            .copied()
            .collect();
        for (o, f) in moved {
            self.registry.partial.remove(&(o, f));
            self.registry.partial.insert((into, f));
        }
        self.registry.merges.push(TrackMerge {
            granularity: level,
            from,
            into,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip_and_leading_zero_run() {
        let m = Mask::rect(5, 4, 0, 0, 2, 1);
        let rle = m.to_rle();
        assert_eq!(rle[0], 0);
        assert_eq!(Mask::from_rle(5, 4, &rle).unwrap(), m);
        assert!(Mask::from_rle(5, 4, &[3, 100]).is_none());
    }

    #[test]
    fn iou_of_rectangles() {
        let a = Mask::rect(10, 10, 0, 0, 4, 10);
        let b = Mask::rect(10, 10, 2, 0, 6, 10);
        assert_eq!(a.intersection_area(&b), 20);
        assert_eq!(a.union_area(&b), 60);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(Mask::new(3, 3).iou(&Mask::new(3, 3)), 0.0);
    }

    #[test]
    fn merge_rewrites_maps_and_forwards() {
        let mut tm = TrackedMasks::new(4, 4, 3);
        tm.id_map_mut(0, Granularity::Small).set(0, 0, 5);
        tm.id_map_mut(2, Granularity::Small).set(1, 1, 9);
        tm.rebuild_registry();
        tm.flag_partial(9, 2);
        tm.merge_ids(Granularity::Small, 9, 5);
        assert_eq!(tm.frames_of(5), vec![0, 2]);
        assert!(tm.is_partial(5, 2));
        assert_eq!(tm.registry.resolve(9), 5);
        let t = &tm.registry.tracks[&5];
        assert_eq!((t.first_frame, t.last_frame), (0, 2));
    }
}
