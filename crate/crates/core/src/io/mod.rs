//! On-disk interchange formats.

mod cameras;
mod checkpoint;
mod config;
mod masks;
mod ply;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use cameras::{read_cameras, write_cameras, CameraRecord};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::SceneConfig;
pub use masks::{
    read_raw_masks, read_raw_masks_png, read_raw_masks_rle, read_tracked_masks, write_raw_masks_png,
    write_raw_masks_rle, write_tracked_masks, MaskIndex, TracksFile,
};
pub use ply::{
    read_gaussians, read_point_cloud, write_gaussians, write_gaussians_to, write_point_cloud, Point,
};

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("json", format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Write `bytes`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
