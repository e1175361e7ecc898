//! Mask sequences as 16-bit PNG id maps (`g{L|M|S}_f{frame:05}.png`) with a JSON index,
//! or as a single run-length-encoded JSON document.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::{read_json, write_file, write_json};
use crate::error::{Error, Result};
use crate::model::{Granularity, IdMap, Mask, TrackInfo, TrackMerge, TrackRegistry, TrackedMasks, BACKGROUND};
use crate::tracking::{RawFrame, RawMask, RawMaskSequence};

fn id_map_name(prefix: &str, level: Granularity, frame: usize) -> String {
    format!("{prefix}g{}_f{frame:05}.png", level.letter())
}

fn write_id_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut pixels = Vec::with_capacity(map.ids.len());
    for &id in &map.ids {
        let v = u16::try_from(id)
            .map_err(|_| Error::format("id map", format!("object id {id} does not fit a 16-bit PNG")))?;
        pixels.push(v);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width, map.height, pixels).expect("buffer sized from the map");
    let mut bytes = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut bytes, image::ImageFormat::Png)?;
    write_file(path, &bytes.into_inner())
}

fn read_id_map(path: &Path) -> Result<IdMap> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    let (width, height, ids): (u32, u32, Vec<u32>) = match img {
        DynamicImage::ImageLuma16(b) => (b.width(), b.height(), b.into_raw().into_iter().map(u32::from).collect()),
        DynamicImage::ImageLuma8(b) => (b.width(), b.height(), b.into_raw().into_iter().map(u32::from).collect()),
        other => {
            return Err(Error::format(
                "id map",
                format!("{}: expected a grayscale PNG, found {:?}", path.display(), other.color()),
            ))
        }
    };
    Ok(IdMap { width, height, ids })
}

fn check_dims(map: &IdMap, width: u32, height: u32, path: &Path) -> Result<()> {
    if (map.width, map.height) != (width, height) {
        return Err(Error::ResolutionMismatch {
            expected: (width, height),
            found: (map.width, map.height),
            context: path.display().to_string(),
        });
    }
    Ok(())
}

fn split_id_map(map: &IdMap) -> Vec<RawMask> {
    map.object_ids()
        .into_iter()
        .map(|id| RawMask {
            track_id: id,
            mask: map.mask_of(id),
        })
        .collect()
}

/// Paint non-overlapping masks into an id map; overlapping masks cannot be stored this way.
fn paint(width: u32, height: u32, masks: &[RawMask], what: &str) -> Result<IdMap> {
    let mut map = IdMap::new(width, height);
    for m in masks {
        for i in m.mask.indices() {
            if map.ids[i] != BACKGROUND {
                return Err(Error::format(
                    "id map",
                    format!("{what}: masks {} and {} overlap; use the RLE format", map.ids[i], m.track_id),
                ));
            }
            map.ids[i] = m.track_id;
        }
    }
    Ok(map)
}

/// `index.json` of a PNG mask directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskIndex {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Track ids per granularity letter.
    pub track_ids: BTreeMap<String, Vec<u32>>,
    /// Frames with a fresh segmentation in `reseg_g?_f?????.png` (ids are candidate ids).
    #[serde(default)]
    pub resegmentation_frames: Vec<usize>,
    /// Frames with candidate propagations in `cand_g?_f?????.png`.
    #[serde(default)]
    pub candidate_frames: Vec<usize>,
}

fn read_level_maps(dir: &Path, prefix: &str, frame: usize, index: &MaskIndex) -> Result<RawFrame> {
    let mut out = RawFrame::default();
    for level in Granularity::ALL {
        let path = dir.join(id_map_name(prefix, level, frame));
        if !path.exists() {
            continue;
        }
        let map = read_id_map(&path)?;
        check_dims(&map, index.width, index.height, &path)?;
        out.levels[level.index()] = split_id_map(&map);
    }
    Ok(out)
}

pub fn read_raw_masks_png(dir: impl AsRef<Path>) -> Result<RawMaskSequence> {
    let dir = dir.as_ref();
    let index: MaskIndex = read_json(dir.join("index.json"))?;
    let mut seq = RawMaskSequence {
        width: index.width,
        height: index.height,
        ..Default::default()
    };
    for f in 0..index.frames {
        let frame = read_level_maps(dir, "", f, &index)?;
        for level in Granularity::ALL {
            let known = index.track_ids.get(&level.letter().to_string());
            for m in frame.level(level) {
                if !known.is_some_and(|ids| ids.contains(&m.track_id)) {
                    return Err(Error::format(
                        "mask index",
                        format!("track {} at frame {f} ({level}) is not listed in index.json", m.track_id),
                    ));
                }
            }
        }
        seq.frames.push(frame);
    }
    for &f in &index.resegmentation_frames {
        seq.resegmentations.insert(f, read_level_maps(dir, "reseg_", f, &index)?);
    }
    for &f in &index.candidate_frames {
        let frame = read_level_maps(dir, "cand_", f, &index)?;
        for m in frame.levels.into_iter().flatten() {
            seq.candidates.entry(m.track_id).or_default().insert(f, m.mask);
        }
    }
    Ok(seq)
}

pub fn write_raw_masks_png(dir: impl AsRef<Path>, seq: &RawMaskSequence) -> Result<()> {
    let dir = dir.as_ref();
    let mut index = MaskIndex {
        width: seq.width,
        height: seq.height,
        frames: seq.frames.len(),
        ..Default::default()
    };
    let mut ids: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for (f, frame) in seq.frames.iter().enumerate() {
        for level in Granularity::ALL {
            let list = frame.level(level);
            ids.entry(level.letter().to_string()).or_default().extend(list.iter().map(|m| m.track_id));
            let map = paint(seq.width, seq.height, list, &format!("frame {f}"))?;
            write_id_map(&dir.join(id_map_name("", level, f)), &map)?;
        }
    }
    index.track_ids = ids.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
    for (&f, frame) in &seq.resegmentations {
        for level in Granularity::ALL {
            let map = paint(seq.width, seq.height, frame.level(level), &format!("re-segmentation {f}"))?;
            write_id_map(&dir.join(id_map_name("reseg_", level, f)), &map)?;
        }
        index.resegmentation_frames.push(f);
    }
    let level_of_candidate: BTreeMap<u32, Granularity> = seq
        .resegmentations
        .values()
        .flat_map(|fr| Granularity::ALL.map(|l| (l, fr.level(l))))
        .flat_map(|(l, list)| list.iter().map(move |m| (m.track_id, l)))
        .collect();
    let mut by_frame: BTreeMap<usize, RawFrame> = BTreeMap::new();
    for (&c, frames) in &seq.candidates {
        let level = level_of_candidate.get(&c).copied().unwrap_or(Granularity::Small);
        for (&f, m) in frames {
            by_frame.entry(f).or_default().levels[level.index()].push(RawMask {
                track_id: c,
                mask: m.clone(),
            });
        }
    }
    for (f, frame) in by_frame {
        for level in Granularity::ALL {
            let map = paint(seq.width, seq.height, frame.level(level), &format!("candidates at {f}"))?;
            write_id_map(&dir.join(id_map_name("cand_", level, f)), &map)?;
        }
        index.candidate_frames.push(f);
    }
    write_json(dir.join("index.json"), &index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RleMask {
    track_id: u32,
    counts: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct RleFrame {
    #[serde(rename = "L", default)]
    large: Vec<RleMask>,
    #[serde(rename = "M", default)]
    middle: Vec<RleMask>,
    #[serde(rename = "S", default)]
    small: Vec<RleMask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RleFile {
    width: u32,
    height: u32,
    frames: Vec<RleFrame>,
    #[serde(default)]
    resegmentations: BTreeMap<usize, RleFrame>,
    #[serde(default)]
    candidates: BTreeMap<u32, BTreeMap<usize, Vec<u32>>>,
}

fn decode(width: u32, height: u32, counts: &[u32], what: impl FnOnce() -> String) -> Result<Mask> {
    Mask::from_rle(width, height, counts)
        .ok_or_else(|| Error::format("rle mask", format!("{}: run lengths do not sum to {width}x{height}", what())))
}

impl RleFrame {
    fn encode(frame: &RawFrame) -> Self {
        let enc = |list: &[RawMask]| {
            list.iter()
                .map(|m| RleMask {
                    track_id: m.track_id,
                    counts: m.mask.to_rle(),
                })
                .collect()
        };
        RleFrame {
            large: enc(frame.level(Granularity::Large)),
            middle: enc(frame.level(Granularity::Middle)),
            small: enc(frame.level(Granularity::Small)),
        }
    }

    fn decode(&self, width: u32, height: u32, what: &str) -> Result<RawFrame> {
        let mut out = RawFrame::default();
        for (level, list) in [
            (Granularity::Large, &self.large),
            (Granularity::Middle, &self.middle),
            (Granularity::Small, &self.small),
        ] {
            for m in list {
                out.levels[level.index()].push(RawMask {
                    track_id: m.track_id,
                    mask: decode(width, height, &m.counts, || format!("{what}, {level}, track {}", m.track_id))?,
                });
            }
        }
        Ok(out)
    }
}

pub fn read_raw_masks_rle(path: impl AsRef<Path>) -> Result<RawMaskSequence> {
    let file: RleFile = read_json(path)?;
    let (w, h) = (file.width, file.height);
    let mut seq = RawMaskSequence {
        width: w,
        height: h,
        ..Default::default()
    };
    for (f, frame) in file.frames.iter().enumerate() {
        seq.frames.push(frame.decode(w, h, &format!("frame {f}"))?);
    }
    for (&f, frame) in &file.resegmentations {
        seq.resegmentations
            .insert(f, frame.decode(w, h, &format!("re-segmentation {f}"))?);
    }
    for (&c, frames) in &file.candidates {
        for (&f, counts) in frames {
            let m = decode(w, h, counts, || format!("candidate {c} at frame {f}"))?;
            seq.candidates.entry(c).or_default().insert(f, m);
        }
    }
    Ok(seq)
}

pub fn write_raw_masks_rle(path: impl AsRef<Path>, seq: &RawMaskSequence) -> Result<()> {
    let file = RleFile {
        width: seq.width,
        height: seq.height,
        frames: seq.frames.iter().map(RleFrame::encode).collect(),
        resegmentations: seq
            .resegmentations
            .iter()
            .map(|(&f, fr)| (f, RleFrame::encode(fr)))
            .collect(),
        candidates: seq
            .candidates
            .iter()
            .map(|(&c, frames)| (c, frames.iter().map(|(&f, m)| (f, m.to_rle())).collect()))
            .collect(),
    };
    write_json(path, &file)
}

/// A directory holds PNG id maps; anything else is read as RLE JSON.
pub fn read_raw_masks(path: impl AsRef<Path>) -> Result<RawMaskSequence> {
    let path = path.as_ref();
    if path.is_dir() {
        read_raw_masks_png(path)
    } else {
        read_raw_masks_rle(path)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: u32,
    pub granularity: Granularity,
    pub first_frame: usize,
    pub last_frame: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialFlag {
    pub object: u32,
    pub frame: usize,
}

/// `tracks.json` next to consolidated id maps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracksFile {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub tracks: Vec<TrackEntry>,
    pub merges: Vec<TrackMerge>,
    pub partial: Vec<PartialFlag>,
}

impl TracksFile {
    pub fn from_masks(masks: &TrackedMasks) -> Self {
        let r = &masks.registry;
        TracksFile {
            width: masks.width,
            height: masks.height,
            frames: masks.frame_count(),
            tracks: r
                .tracks
                .iter()
                .map(|(&id, t)| TrackEntry {
                    id,
                    granularity: t.granularity,
                    first_frame: t.first_frame,
                    last_frame: t.last_frame,
                })
                .collect(),
            merges: r.merges.clone(),
            partial: r
                .partial
                .iter()
                .map(|&(object, frame)| PartialFlag { object, frame })
                .collect(),
        }
    }

    pub fn registry(&self) -> TrackRegistry {
        TrackRegistry {
            tracks: self
                .tracks
                .iter()
                .map(|t| {
                    (
                        t.id,
                        TrackInfo {
                            granularity: t.granularity,
                            first_frame: t.first_frame,
                            last_frame: t.last_frame,
                        },
                    )
                })
                .collect(),
            merges: self.merges.clone(),
            partial: self.partial.iter().map(|p| (p.object, p.frame)).collect(),
        }
    }
}

pub fn write_tracked_masks(dir: impl AsRef<Path>, masks: &TrackedMasks) -> Result<()> {
    let dir = dir.as_ref();
    for f in 0..masks.frame_count() {
        for level in Granularity::ALL {
            write_id_map(&dir.join(id_map_name("", level, f)), masks.id_map(f, level))?;
        }
    }
    write_json(dir.join("tracks.json"), &TracksFile::from_masks(masks))
}

pub fn read_tracked_masks(dir: impl AsRef<Path>) -> Result<TrackedMasks> {
    let dir = dir.as_ref();
    let file: TracksFile = read_json(dir.join("tracks.json"))?;
    let mut masks = TrackedMasks::new(file.width, file.height, file.frames);
    for f in 0..file.frames {
        for level in Granularity::ALL {
            let path = dir.join(id_map_name("", level, f));
            let map = read_id_map(&path)?;
            check_dims(&map, file.width, file.height, &path)?;
            *masks.id_map_mut(f, level) = map;
        }
    }
    masks.registry = file.registry();
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawMaskSequence {
        let (w, h) = (12, 9);
        let a = Mask::rect(w, h, 0, 0, 6, 6);
        let b = Mask::rect(w, h, 3, 3, 9, 9);
        let mut frame = RawFrame::default();
        frame.levels[Granularity::Small.index()] = vec![
            RawMask { track_id: 3, mask: a.clone() },
            RawMask { track_id: 4, mask: b.clone() },
        ];
        frame.levels[Granularity::Large.index()] = vec![RawMask { track_id: 1, mask: a.clone() }];
        let mut reseg = RawFrame::default();
        reseg.levels[Granularity::Small.index()] = vec![RawMask { track_id: 100, mask: b.clone() }];
        RawMaskSequence {
            width: w,
            height: h,
            frames: vec![frame.clone(), frame],
            resegmentations: [(1, reseg)].into(),
            candidates: [(100, [(1, b)].into())].into(),
        }
    }

    #[test]
    fn rle_keeps_overlapping_masks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.json");
        let seq = sample();
        write_raw_masks_rle(&path, &seq).unwrap();
        assert_eq!(read_raw_masks(&path).unwrap(), seq);
    }

    #[test]
    fn png_refuses_overlap_but_round_trips_disjoint_masks() {
        let dir = tempfile::tempdir().unwrap();
        let mut seq = sample();
        assert!(write_raw_masks_png(dir.path(), &seq).is_err());
        for f in &mut seq.frames {
            let s = &mut f.levels[Granularity::Small.index()];
            let first = s[0].mask.clone();
            s[1].mask.subtract(&first);
        }
        write_raw_masks_png(dir.path(), &seq).unwrap();
        assert_eq!(read_raw_masks(dir.path()).unwrap(), seq);
    }

    #[test]
    fn tracked_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut masks = TrackedMasks::new(5, 4, 2);
        masks.id_map_mut(1, Granularity::Middle).set(2, 3, 700);
        masks.id_map_mut(0, Granularity::Small).set(0, 0, 9);
        masks.rebuild_registry();
        masks.flag_partial(9, 0);
        write_tracked_masks(dir.path(), &masks).unwrap();
        assert_eq!(read_tracked_masks(dir.path()).unwrap(), masks);
    }

    #[test]
    fn truncated_rle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.json");
        std::fs::write(&path, r#"{"width":2,"height":2,"frames":[{"S":[{"track_id":1,"counts":[1,1]}]}]}"#).unwrap();
        assert!(matches!(read_raw_masks(&path), Err(Error::Format { .. })));
    }
}
